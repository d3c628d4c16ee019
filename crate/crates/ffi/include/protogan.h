#ifndef PROTOGAN_H
#define PROTOGAN_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum PgStatus {
  PG_STATUS_OK = 0,
  PG_STATUS_NULL_POINTER = 1,
  PG_STATUS_INVALID_ARGUMENT = 2,
  PG_STATUS_IO = 3,
  PG_STATUS_FORMAT = 4,
  PG_STATUS_CONFIG = 5,
  PG_STATUS_SHAPE = 6,
  PG_STATUS_NUMERICAL = 7,
  PG_STATUS_CONTRACT = 8,
  PG_STATUS_PANIC = 9,
} PgStatus;

// Pipeline configuration.
typedef struct PgConfig PgConfig;

// Loaded or generated feature set.
typedef struct PgDataset PgDataset;

// A feed-forward network, e.g. a trained prototype network.
typedef struct PgNet PgNet;

// Reports of one evaluation, one per (protocol, strategy, shots).
typedef struct PgReport PgReport;

// Summary of one report entry. Missing metrics (seen accuracy and the
// harmonic mean under the few-shot protocol, synthesis quality for the
// base strategy) are NaN.
typedef struct PgSummary {
  // 0 = generalized few-shot, 1 = few-shot.
  uint32_t mode;
  // 0 = base, 1 = heuristic, 2 = sample, 3 = learned.
  uint32_t strategy;
  uint32_t shots;
  uint32_t runs;
  double seen_mean;
  double seen_std;
  double novel_mean;
  double novel_std;
  double harmonic_mean;
  double harmonic_std;
  double quality_mean;
  double quality_std;
} PgSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *pg_last_error(void);

// Library version as a static NUL-terminated string.
const char *pg_version(void);

// Default configuration.
enum PgStatus pg_config_new(struct PgConfig **out);

// Configuration read from a `key = value` file.
enum PgStatus pg_config_load(const char *file, struct PgConfig **out);

// Sets one configuration key from its text form.
enum PgStatus pg_config_set(struct PgConfig *cfg, const char *key, const char *value);

void pg_config_free(struct PgConfig *cfg);

// Loads a feature file; `.csv` is read as CSV, anything else as binary.
enum PgStatus pg_dataset_load(const char *file, struct PgDataset **out);

// Writes the dataset; the extension picks the format as in `pg_dataset_load`.
enum PgStatus pg_dataset_save(const struct PgDataset *ds, const char *file);

// Gaussian-cluster benchmark with default shape parameters apart from the
// given sizes and seed.
enum PgStatus pg_dataset_generate(uint32_t classes,
                                  uint32_t dim,
                                  uint32_t per_class,
                                  uint64_t seed,
                                  struct PgDataset **out);

// Number of records, or 0 for a null handle.
size_t pg_dataset_len(const struct PgDataset *ds);

// Feature dimension, or 0 for a null handle.
size_t pg_dataset_dim(const struct PgDataset *ds);

// Number of distinct classes, or 0 for a null handle.
size_t pg_dataset_num_classes(const struct PgDataset *ds);

void pg_dataset_free(struct PgDataset *ds);

// Runs the evaluation described by the configuration's `run.*` keys.
enum PgStatus pg_run(const struct PgDataset *ds,
                     const struct PgConfig *cfg,
                     uint32_t jobs,
                     struct PgReport **out);

// Number of entries, or 0 for a null handle.
size_t pg_report_len(const struct PgReport *report);

// Summary of entry `index`.
enum PgStatus pg_report_get(const struct PgReport *report, size_t index, struct PgSummary *out);

// Writes the table, CSV, JSONL and JSON report files under `dir`, one set
// per protocol.
enum PgStatus pg_report_write(const struct PgReport *report, const char *dir);

void pg_report_free(struct PgReport *report);

// Trains a prototype network on every class of the dataset.
enum PgStatus pg_net_train_cptn(const struct PgDataset *ds,
                                const struct PgConfig *cfg,
                                uint64_t seed,
                                struct PgNet **out);

// Reads a network file.
enum PgStatus pg_net_load(const char *file, struct PgNet **out);

// Writes a network file.
enum PgStatus pg_net_save(const struct PgNet *net, const char *file);

// Input width, or 0 for a null handle.
size_t pg_net_in_dim(const struct PgNet *net);

// Output width, or 0 for a null handle.
size_t pg_net_out_dim(const struct PgNet *net);

// Evaluates the network on one row. `input_len` must equal the input width
// and `output_len` the output width.
enum PgStatus pg_net_forward(const struct PgNet *net,
                             const double *input,
                             size_t input_len,
                             double *output,
                             size_t output_len);

void pg_net_free(struct PgNet *net);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PROTOGAN_H */
