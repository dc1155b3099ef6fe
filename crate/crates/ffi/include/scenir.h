#ifndef SCENIR_H
#define SCENIR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum ScenirStatus {
  SCENIR_STATUS_OK = 0,
  /**
   * A required pointer was null.
   */
  SCENIR_STATUS_NULL_ARGUMENT = 1,
  /**
   * An argument was out of range or not valid UTF-8.
   */
  SCENIR_STATUS_INVALID_ARGUMENT = 2,
  /**
   * A file could not be read.
   */
  SCENIR_STATUS_IO = 3,
  /**
   * A file was read but its contents are malformed or inconsistent.
   */
  SCENIR_STATUS_DATA = 4,
  /**
   * Exact edit distance refused a graph above the node budget.
   */
  SCENIR_STATUS_BUDGET_EXCEEDED = 5,
  /**
   * A computation produced a non-finite value.
   */
  SCENIR_STATUS_NUMERICAL = 6,
  /**
   * The caller's output buffer is too short.
   */
  SCENIR_STATUS_BUFFER_TOO_SMALL = 7,
  /**
   * Internal error; the library caught a panic.
   */
  SCENIR_STATUS_INTERNAL = 8,
} ScenirStatus;

/**
 * Preprocessed scene graphs, validated against a table.
 */
typedef struct ScenirGraphs ScenirGraphs;

/**
 * Trained model.
 */
typedef struct ScenirModel ScenirModel;

/**
 * Class-embedding table together with the edit-distance cost model built
 * from it.
 */
typedef struct ScenirTable ScenirTable;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a class-embedding table (text or binary format).
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum ScenirStatus scenir_table_load(const char *path, struct ScenirTable **out);

/**
 * Builds the deterministic synthetic table for `seed`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum ScenirStatus scenir_table_synth(uint64_t seed,
                                     size_t objects,
                                     size_t predicates,
                                     size_t dim,
                                     struct ScenirTable **out);

/**
 * Embedding width of the table, or 0 for a null handle.
 *
 * # Safety
 * `table` must be null or a live handle.
 */
size_t scenir_table_dim(const struct ScenirTable *table);

/**
 * # Safety
 * `table` must be null or a handle not yet freed.
 */
void scenir_table_free(struct ScenirTable *table);

/**
 * Loads a preprocessed graph file and checks every graph against `table`.
 *
 * # Safety
 * `path` must be a nul-terminated string, `table` a live handle and `out`
 * a valid pointer.
 */
enum ScenirStatus scenir_graphs_load(const char *path,
                                     const struct ScenirTable *table,
                                     struct ScenirGraphs **out);

/**
 * Number of graphs, or 0 for a null handle.
 *
 * # Safety
 * `graphs` must be null or a live handle.
 */
size_t scenir_graphs_len(const struct ScenirGraphs *graphs);

/**
 * # Safety
 * `graphs` must be null or a handle not yet freed.
 */
void scenir_graphs_free(struct ScenirGraphs *graphs);

/**
 * Loads a model checkpoint.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum ScenirStatus scenir_model_load(const char *path, struct ScenirModel **out);

/**
 * Length of a graph embedding produced by the model, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t scenir_model_embedding_dim(const struct ScenirModel *model);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void scenir_model_free(struct ScenirModel *model);

/**
 * Writes the embedding of graph `index` into `out`, which holds `out_len`
 * doubles. `out_len` must be at least [`scenir_model_embedding_dim`].
 *
 * # Safety
 * Handles must be live and `out` must point to `out_len` writable doubles.
 */
enum ScenirStatus scenir_embed(const struct ScenirModel *model,
                               const struct ScenirGraphs *graphs,
                               size_t index,
                               double *out,
                               size_t out_len);

/**
 * Bipartite upper bound on the edit distance between graphs `i` and `j`.
 *
 * # Safety
 * Handles must be live and `out` a valid pointer.
 */
enum ScenirStatus scenir_ged_approx(const struct ScenirTable *table,
                                    const struct ScenirGraphs *graphs,
                                    size_t i,
                                    size_t j,
                                    double *out);

/**
 * Exact edit distance; graphs above `node_budget` nodes are refused with
 * [`ScenirStatus::BudgetExceeded`].
 *
 * # Safety
 * Handles must be live and `out` a valid pointer.
 */
enum ScenirStatus scenir_ged_exact(const struct ScenirTable *table,
                                   const struct ScenirGraphs *graphs,
                                   size_t i,
                                   size_t j,
                                   size_t node_budget,
                                   double *out);

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call into the library on the same
 * thread.
 */
const char *scenir_last_error_message(void);

/**
 * Library version as a static string.
 */
const char *scenir_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCENIR_H */
