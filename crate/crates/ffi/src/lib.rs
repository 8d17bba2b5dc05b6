//! C ABI over the engine.
//!
//! Every function returns a [`BrxStatus`]; results come back through out
//! pointers. Handles are opaque and owned by the caller, who releases them
//! with the matching `*_free` function. After a non-OK status,
//! [`brx_last_error_message`] describes the failure on the calling thread.
//! Panics never cross the boundary; they surface as `BRX_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::slice;

use brexit_core::game::{build_game, Game, GameKind, GameState};
use brexit_core::mcts::{search, PriorSource, RandomRollout, SearchConfig};
use brexit_core::net::{Checkpoint, Network, NetworkConfig};
use brexit_core::{stats, Error};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BrxStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    IllegalAction = 3,
    TerminalState = 4,
    ShapeMismatch = 5,
    Io = 6,
    Checkpoint = 7,
    BufferTooSmall = 8,
    Panic = 9,
    Internal = 10,
}

/// A game ruleset.
pub struct BrxGame(Box<dyn Game>);

/// An immutable position.
pub struct BrxState(GameState);

/// Apprentice network weights.
pub struct BrxNetwork(Network);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct BrxStateInfo {
    pub to_move: u32,
    pub move_count: u32,
    pub terminal: bool,
    /// Winning player, or -1 for a draw or an unfinished game.
    pub winner: i32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct BrxKsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub exact: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(message: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = message);
}

struct Failure(BrxStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::IllegalAction { .. } | Error::OpponentIllegalAction { .. } => {
                BrxStatus::IllegalAction
            }
            Error::TerminalState => BrxStatus::TerminalState,
            Error::ShapeMismatch(_) => BrxStatus::ShapeMismatch,
            Error::Io { .. } => BrxStatus::Io,
            Error::Checkpoint(_) => BrxStatus::Checkpoint,
            Error::InvalidBoard(_)
            | Error::MalformedDistribution(_)
            | Error::InvalidArgument(_)
            | Error::Empty(_)
            | Error::Config { .. } => BrxStatus::InvalidArgument,
            _ => BrxStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(BrxStatus::NullPointer, format!("{what} is null"))
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> BrxStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error(String::new());
            BrxStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {message}"));
            BrxStatus::Panic
        }
    }
}

unsafe fn get<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, Failure> {
    ptr.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn slice_in<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(ptr, len))
}

unsafe fn slice_out<'a, T>(
    ptr: *mut T,
    capacity: usize,
    needed: usize,
    what: &str,
) -> Result<&'a mut [T], Failure> {
    if capacity < needed {
        return Err(Failure(
            BrxStatus::BufferTooSmall,
            format!("{what} holds {capacity} entries, {needed} needed"),
        ));
    }
    if needed == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(ptr, needed))
}

/// Copies the last error message of this thread into `buffer` (NUL
/// terminated, truncated to fit) and returns the full message length in
/// bytes, excluding the terminator.
///
/// # Safety
/// `buffer` must be null or valid for `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn brx_last_error_message(buffer: *mut c_char, capacity: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buffer.is_null() && capacity > 0 {
            let n = msg.len().min(capacity - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buffer.cast::<u8>(), n);
            *buffer.add(n) = 0;
        }
        msg.len()
    })
}

/// `kind` 0 is the connect-N family, 1 is tic-tac-toe (dimensions ignored).
///
/// # Safety
/// `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn brx_game_new(
    kind: u32,
    height: usize,
    width: usize,
    connect_n: usize,
    out: *mut *mut BrxGame,
) -> BrxStatus {
    guard(|| {
        let kind = match kind {
            0 => GameKind::Connect,
            1 => GameKind::Tictactoe,
            k => {
                return Err(Failure(
                    BrxStatus::InvalidArgument,
                    format!("unknown game kind {k}"),
                ))
            }
        };
        let game = build_game(kind, height, width, connect_n)?;
        put(out, Box::into_raw(Box::new(BrxGame(game))), "out")
    })
}

/// # Safety
/// `game` must be null or a handle from `brx_game_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn brx_game_free(game: *mut BrxGame) {
    if !game.is_null() {
        drop(Box::from_raw(game));
    }
}

/// Number of actions of the game.
///
/// # Safety
/// `game` must be a live handle and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn brx_game_num_actions(game: *const BrxGame, out: *mut usize) -> BrxStatus {
    guard(|| put(out, get(game, "game")?.0.num_actions(), "out"))
}

/// # Safety
/// `game` must be a live handle and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn brx_state_initial(
    game: *const BrxGame,
    out: *mut *mut BrxState,
) -> BrxStatus {
    guard(|| {
        let s = get(game, "game")?.0.initial_state();
        put(out, Box::into_raw(Box::new(BrxState(s))), "out")
    })
}

/// Parses the single-line compact form `HxWxN:P:cells`.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn brx_state_parse(
    text: *const c_char,
    out: *mut *mut BrxState,
) -> BrxStatus {
    guard(|| {
        if text.is_null() {
            return Err(null("text"));
        }
        let text = CStr::from_ptr(text)
            .to_str()
            .map_err(|_| Failure(BrxStatus::InvalidArgument, "text is not UTF-8".into()))?;
        let s: GameState = text.parse()?;
        put(out, Box::into_raw(Box::new(BrxState(s))), "out")
    })
}

/// # Safety
/// `state` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn brx_state_free(state: *mut BrxState) {
    if !state.is_null() {
        drop(Box::from_raw(state));
    }
}

/// # Safety
/// `state` must be a live handle and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn brx_state_info(
    state: *const BrxState,
    out: *mut BrxStateInfo,
) -> BrxStatus {
    guard(|| {
        let s = &get(state, "state")?.0;
        let info = BrxStateInfo {
            to_move: s.to_move() as u32,
            move_count: s.move_count() as u32,
            terminal: s.is_terminal(),
            winner: s
                .outcome()
                .and_then(|o| o.winner())
                .map_or(-1, |w| w as i32),
        };
        put(out, info, "out")
    })
}

/// Writes the legal actions into `actions` and their number into `len`.
///
/// # Safety
/// Handles must be live, `actions` valid for `capacity` writes and `len`
/// valid for a write.
#[no_mangle]
pub unsafe extern "C" fn brx_state_legal_actions(
    game: *const BrxGame,
    state: *const BrxState,
    actions: *mut usize,
    capacity: usize,
    len: *mut usize,
) -> BrxStatus {
    guard(|| {
        let legal = get(game, "game")?
            .0
            .legal_actions(&get(state, "state")?.0)?;
        put(len, legal.len(), "len")?;
        slice_out(actions, capacity, legal.len(), "actions")?.copy_from_slice(&legal);
        Ok(())
    })
}

/// Plays `action` and returns the successor as a new handle.
///
/// # Safety
/// Handles must be live and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn brx_state_apply(
    game: *const BrxGame,
    state: *const BrxState,
    action: usize,
    out: *mut *mut BrxState,
) -> BrxStatus {
    guard(|| {
        let step = get(game, "game")?
            .0
            .apply_action(&get(state, "state")?.0, action)?;
        put(
            out,
            Box::into_raw(Box::new(BrxState(step.next_state))),
            "out",
        )
    })
}

/// # Safety
/// `state` must be live and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn brx_state_mirror(
    state: *const BrxState,
    out: *mut *mut BrxState,
) -> BrxStatus {
    guard(|| {
        let m = get(state, "state")?.0.mirrored();
        put(out, Box::into_raw(Box::new(BrxState(m))), "out")
    })
}

/// Renders the board rows top-down into `buffer` as a NUL-terminated
/// string; `len` receives the length without the terminator.
///
/// # Safety
/// `state` must be live, `buffer` valid for `capacity` bytes and `len`
/// valid for a write.
#[no_mangle]
pub unsafe extern "C" fn brx_state_render(
    state: *const BrxState,
    buffer: *mut c_char,
    capacity: usize,
    len: *mut usize,
) -> BrxStatus {
    guard(|| {
        let text = get(state, "state")?.0.render();
        put(len, text.len(), "len")?;
        let out = slice_out(buffer.cast::<u8>(), capacity, text.len() + 1, "buffer")?;
        out[..text.len()].copy_from_slice(text.as_bytes());
        out[text.len()] = 0;
        Ok(())
    })
}

/// Fresh network with the default architecture for `game`.
///
/// # Safety
/// `game` must be live and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn brx_network_new(
    game: *const BrxGame,
    num_opponents: usize,
    seed: u64,
    out: *mut *mut BrxNetwork,
) -> BrxStatus {
    guard(|| {
        let g = &get(game, "game")?.0;
        let cfg = NetworkConfig::new(g.height(), g.width(), g.num_actions(), num_opponents);
        let net = Network::new(cfg, seed)?;
        put(out, Box::into_raw(Box::new(BrxNetwork(net))), "out")
    })
}

/// Loads the network of a training checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn brx_network_load(
    path: *const c_char,
    out: *mut *mut BrxNetwork,
) -> BrxStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Failure(BrxStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let ck = Checkpoint::load(Path::new(path))?;
        put(out, Box::into_raw(Box::new(BrxNetwork(ck.network))), "out")
    })
}

/// # Safety
/// `network` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn brx_network_free(network: *mut BrxNetwork) {
    if !network.is_null() {
        drop(Box::from_raw(network));
    }
}

/// Actor distribution (one entry per action) and critic value of `state`
/// from the perspective of the player to move.
///
/// # Safety
/// Handles must be live, `policy` valid for `capacity` writes and `value`
/// valid for a write.
#[no_mangle]
pub unsafe extern "C" fn brx_network_forward(
    network: *const BrxNetwork,
    game: *const BrxGame,
    state: *const BrxState,
    policy: *mut f64,
    capacity: usize,
    value: *mut f64,
) -> BrxStatus {
    guard(|| {
        let (net, g, s) = (
            &get(network, "network")?.0,
            &get(game, "game")?.0,
            &get(state, "state")?.0,
        );
        if s.is_terminal() {
            return Err(Error::TerminalState.into());
        }
        let out = net.forward(&g.encode(s, s.to_move()), &g.legal_mask(s))?;
        put(value, out.critic, "value")?;
        slice_out(policy, capacity, out.actor.len(), "policy")?.copy_from_slice(&out.actor);
        Ok(())
    })
}

/// Runs a search of `budget` iterations from `state`. With a null
/// `network` leaves are valued by random playouts under uniform priors;
/// otherwise the network supplies priors and values. Root visit counts go
/// to `visits` (one per action) and the chosen action to `action`.
///
/// # Safety
/// `game` and `state` must be live, `network` null or live, `visits` valid
/// for `capacity` writes and `action` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn brx_mcts_search(
    game: *const BrxGame,
    state: *const BrxState,
    network: *const BrxNetwork,
    budget: usize,
    c_puct: f64,
    seed: u64,
    visits: *mut u32,
    capacity: usize,
    action: *mut usize,
) -> BrxStatus {
    guard(|| {
        let (g, s) = (&get(game, "game")?.0, &get(state, "state")?.0);
        if !(c_puct.is_finite() && c_puct >= 0.0) {
            return Err(Failure(
                BrxStatus::InvalidArgument,
                format!("c_puct {c_puct} must be finite and non-negative"),
            ));
        }
        let config = SearchConfig {
            budget,
            c_puct,
            dirichlet: None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let result = match network.as_ref() {
            Some(n) => search(&**g, s, &n.0, &PriorSource::Apprentice, &config, &mut rng)?,
            None => search(
                &**g,
                s,
                &RandomRollout,
                &PriorSource::Apprentice,
                &config,
                &mut rng,
            )?,
        };
        let counts = result.visit_counts();
        let out = slice_out(visits, capacity, counts.len(), "visits")?;
        for (o, c) in out.iter_mut().zip(&counts) {
            *o = *c as u32;
        }
        put(action, result.action, "action")
    })
}

/// Interquartile mean of `len >= 4` values.
///
/// # Safety
/// `values` must be valid for `len` reads and `out` for a write.
#[no_mangle]
pub unsafe extern "C" fn brx_stats_iqm(values: *const f64, len: usize, out: *mut f64) -> BrxStatus {
    guard(|| put(out, stats::iqm(slice_in(values, len, "values")?)?, "out"))
}

/// Probability that a draw from `x` exceeds one from `y`, ties as half.
///
/// # Safety
/// `x` and `y` must be valid for `nx` and `ny` reads and `out` for a write.
#[no_mangle]
pub unsafe extern "C" fn brx_stats_probability_of_improvement(
    x: *const f64,
    nx: usize,
    y: *const f64,
    ny: usize,
    out: *mut f64,
) -> BrxStatus {
    guard(|| {
        let p = stats::probability_of_improvement(slice_in(x, nx, "x")?, slice_in(y, ny, "y")?)?;
        put(out, p, "out")
    })
}

/// Two-sided two-sample Kolmogorov-Smirnov test.
///
/// # Safety
/// `x` and `y` must be valid for `nx` and `ny` reads and `out` for a write.
#[no_mangle]
pub unsafe extern "C" fn brx_stats_ks_two_sample(
    x: *const f64,
    nx: usize,
    y: *const f64,
    ny: usize,
    out: *mut BrxKsResult,
) -> BrxStatus {
    guard(|| {
        let r = stats::ks_two_sample(slice_in(x, nx, "x")?, slice_in(y, ny, "y")?)?;
        put(
            out,
            BrxKsResult {
                statistic: r.statistic,
                p_value: r.p_value,
                exact: r.exact,
            },
            "out",
        )
    })
}
