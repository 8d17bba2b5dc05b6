#ifndef BREXIT_H
#define BREXIT_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BrxStatus {
  BRX_STATUS_OK = 0,
  BRX_STATUS_NULL_POINTER = 1,
  BRX_STATUS_INVALID_ARGUMENT = 2,
  BRX_STATUS_ILLEGAL_ACTION = 3,
  BRX_STATUS_TERMINAL_STATE = 4,
  BRX_STATUS_SHAPE_MISMATCH = 5,
  BRX_STATUS_IO = 6,
  BRX_STATUS_CHECKPOINT = 7,
  BRX_STATUS_BUFFER_TOO_SMALL = 8,
  BRX_STATUS_PANIC = 9,
  BRX_STATUS_INTERNAL = 10,
} BrxStatus;

/**
 * A game ruleset.
 */
typedef struct BrxGame BrxGame;

/**
 * Apprentice network weights.
 */
typedef struct BrxNetwork BrxNetwork;

/**
 * An immutable position.
 */
typedef struct BrxState BrxState;

typedef struct BrxStateInfo {
  uint32_t to_move;
  uint32_t move_count;
  bool terminal;
  /**
   * Winning player, or -1 for a draw or an unfinished game.
   */
  int32_t winner;
} BrxStateInfo;

typedef struct BrxKsResult {
  double statistic;
  double p_value;
  bool exact;
} BrxKsResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buffer` (NUL
 * terminated, truncated to fit) and returns the full message length in
 * bytes, excluding the terminator.
 *
 * # Safety
 * `buffer` must be null or valid for `capacity` bytes.
 */
size_t brx_last_error_message(char *buffer, size_t capacity);

/**
 * `kind` 0 is the connect-N family, 1 is tic-tac-toe (dimensions ignored).
 *
 * # Safety
 * `out` must be valid for a write.
 */
enum BrxStatus brx_game_new(uint32_t kind,
                            size_t height,
                            size_t width,
                            size_t connect_n,
                            struct BrxGame **out);

/**
 * # Safety
 * `game` must be null or a handle from `brx_game_new` not yet freed.
 */
void brx_game_free(struct BrxGame *game);

/**
 * Number of actions of the game.
 *
 * # Safety
 * `game` must be a live handle and `out` valid for a write.
 */
enum BrxStatus brx_game_num_actions(const struct BrxGame *game, size_t *out);

/**
 * # Safety
 * `game` must be a live handle and `out` valid for a write.
 */
enum BrxStatus brx_state_initial(const struct BrxGame *game, struct BrxState **out);

/**
 * Parses the single-line compact form `HxWxN:P:cells`.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` valid for a write.
 */
enum BrxStatus brx_state_parse(const char *text, struct BrxState **out);

/**
 * # Safety
 * `state` must be null or a live handle.
 */
void brx_state_free(struct BrxState *state);

/**
 * # Safety
 * `state` must be a live handle and `out` valid for a write.
 */
enum BrxStatus brx_state_info(const struct BrxState *state, struct BrxStateInfo *out);

/**
 * Writes the legal actions into `actions` and their number into `len`.
 *
 * # Safety
 * Handles must be live, `actions` valid for `capacity` writes and `len`
 * valid for a write.
 */
enum BrxStatus brx_state_legal_actions(const struct BrxGame *game,
                                       const struct BrxState *state,
                                       size_t *actions,
                                       size_t capacity,
                                       size_t *len);

/**
 * Plays `action` and returns the successor as a new handle.
 *
 * # Safety
 * Handles must be live and `out` valid for a write.
 */
enum BrxStatus brx_state_apply(const struct BrxGame *game,
                               const struct BrxState *state,
                               size_t action,
                               struct BrxState **out);

/**
 * # Safety
 * `state` must be live and `out` valid for a write.
 */
enum BrxStatus brx_state_mirror(const struct BrxState *state, struct BrxState **out);

/**
 * Renders the board rows top-down into `buffer` as a NUL-terminated
 * string; `len` receives the length without the terminator.
 *
 * # Safety
 * `state` must be live, `buffer` valid for `capacity` bytes and `len`
 * valid for a write.
 */
enum BrxStatus brx_state_render(const struct BrxState *state,
                                char *buffer,
                                size_t capacity,
                                size_t *len);

/**
 * Fresh network with the default architecture for `game`.
 *
 * # Safety
 * `game` must be live and `out` valid for a write.
 */
enum BrxStatus brx_network_new(const struct BrxGame *game,
                               size_t num_opponents,
                               uint64_t seed,
                               struct BrxNetwork **out);

/**
 * Loads the network of a training checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` valid for a write.
 */
enum BrxStatus brx_network_load(const char *path, struct BrxNetwork **out);

/**
 * # Safety
 * `network` must be null or a live handle.
 */
void brx_network_free(struct BrxNetwork *network);

/**
 * Actor distribution (one entry per action) and critic value of `state`
 * from the perspective of the player to move.
 *
 * # Safety
 * Handles must be live, `policy` valid for `capacity` writes and `value`
 * valid for a write.
 */
enum BrxStatus brx_network_forward(const struct BrxNetwork *network,
                                   const struct BrxGame *game,
                                   const struct BrxState *state,
                                   double *policy,
                                   size_t capacity,
                                   double *value);

/**
 * Runs a search of `budget` iterations from `state`. With a null
 * `network` leaves are valued by random playouts under uniform priors;
 * otherwise the network supplies priors and values. Root visit counts go
 * to `visits` (one per action) and the chosen action to `action`.
 *
 * # Safety
 * `game` and `state` must be live, `network` null or live, `visits` valid
 * for `capacity` writes and `action` valid for a write.
 */
enum BrxStatus brx_mcts_search(const struct BrxGame *game,
                               const struct BrxState *state,
                               const struct BrxNetwork *network,
                               size_t budget,
                               double c_puct,
                               uint64_t seed,
                               uint32_t *visits,
                               size_t capacity,
                               size_t *action);

/**
 * Interquartile mean of `len >= 4` values.
 *
 * # Safety
 * `values` must be valid for `len` reads and `out` for a write.
 */
enum BrxStatus brx_stats_iqm(const double *values, size_t len, double *out);

/**
 * Probability that a draw from `x` exceeds one from `y`, ties as half.
 *
 * # Safety
 * `x` and `y` must be valid for `nx` and `ny` reads and `out` for a write.
 */
enum BrxStatus brx_stats_probability_of_improvement(const double *x,
                                                    size_t nx,
                                                    const double *y,
                                                    size_t ny,
                                                    double *out);

/**
 * Two-sided two-sample Kolmogorov-Smirnov test.
 *
 * # Safety
 * `x` and `y` must be valid for `nx` and `ny` reads and `out` for a write.
 */
enum BrxStatus brx_stats_ks_two_sample(const double *x,
                                       size_t nx,
                                       const double *y,
                                       size_t ny,
                                       struct BrxKsResult *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BREXIT_H */
