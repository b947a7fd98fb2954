#ifndef MISALIGN_H
#define MISALIGN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define MISALIGN_STAT_T1 (1 << 0)

#define MISALIGN_STAT_KS_PERM (1 << 1)

#define MISALIGN_STAT_KS_CRITICAL (1 << 2)

/**
 * Result codes. The first four match the command-line exit codes.
 */
typedef enum MisalignStatus {
  MISALIGN_STATUS_OK = 0,
  /**
   * Bad arguments or configuration.
   */
  MISALIGN_STATUS_USAGE = 1,
  /**
   * Input data failed validation.
   */
  MISALIGN_STATUS_DATA = 2,
  /**
   * The chat endpoint failed.
   */
  MISALIGN_STATUS_UPSTREAM = 3,
  /**
   * A required pointer argument was null.
   */
  MISALIGN_STATUS_NULL_ARGUMENT = 4,
  /**
   * A string argument was not valid UTF-8.
   */
  MISALIGN_STATUS_INVALID_UTF8 = 5,
  /**
   * The requested entry does not exist.
   */
  MISALIGN_STATUS_NOT_FOUND = 6,
  /**
   * Internal panic; the handle involved should be discarded.
   */
  MISALIGN_STATUS_PANIC = 7,
} MisalignStatus;

typedef enum MisalignStatistic {
  MISALIGN_STATISTIC_T1 = 0,
  MISALIGN_STATISTIC_KS_PERMUTATION = 1,
  MISALIGN_STATISTIC_KS_CRITICAL = 2,
} MisalignStatistic;

typedef enum MisalignMethod {
  MISALIGN_METHOD_MONTE_CARLO = 0,
  MISALIGN_METHOD_EXACT = 1,
  MISALIGN_METHOD_ASYMPTOTIC_FORMULA = 2,
  MISALIGN_METHOD_TABLE = 3,
} MisalignMethod;

/**
 * Opaque loaded human + LLM data.
 */
typedef struct MisalignDataset MisalignDataset;

/**
 * Opaque test report.
 */
typedef struct MisalignReport MisalignReport;

/**
 * Test settings. Initialize with [`misalign_test_config_default`].
 */
typedef struct MisalignTestConfig {
  double alpha;
  uint64_t num_permutations;
  uint64_t seed;
  /**
   * Enumerate exactly up to this many count-splits; 0 forces Monte-Carlo.
   */
  uint64_t exact_threshold;
  /**
   * Bitwise OR of `MISALIGN_STAT_*`.
   */
  uint32_t statistics;
  /**
   * Nonzero removes the refused option before testing.
   */
  uint8_t drop_refused;
  /**
   * Nonzero uses natural logarithms for entropy.
   */
  uint8_t entropy_base_e;
  /**
   * Nonzero adds per-question Wasserstein distances to the report.
   */
  uint8_t wasserstein;
  /**
   * Worker threads; 0 uses the default.
   */
  uint32_t jobs;
} MisalignTestConfig;

/**
 * A ratio of rejections to testable pairs. `value` is NaN when `total` is 0.
 */
typedef struct MisalignRatio {
  double value;
  uint64_t rejections;
  uint64_t total;
} MisalignRatio;

/**
 * One test outcome. Absent p-values / critical values are NaN.
 */
typedef struct MisalignDecision {
  double observed;
  double p_value;
  double critical_value;
  uint8_t reject;
  uint8_t degenerate;
  uint8_t untestable;
  enum MisalignMethod method;
} MisalignDecision;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread, or null. Valid until the
 * next call into this library on the same thread.
 */
const char *misalign_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *misalign_version(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void misalign_string_free(char *s);

/**
 * Fills `out` with the default settings (alpha 0.05, all statistics).
 *
 * # Safety
 * `out` must be null or point to writable memory for one config.
 */
enum MisalignStatus misalign_test_config_default(struct MisalignTestConfig *out);

/**
 * Loads a question manifest plus human and LLM response files (aggregated
 * or respondent-level CSV) into a dataset handle.
 *
 * # Safety
 * Path arguments must be NUL-terminated strings; `out` must be writable.
 */
enum MisalignStatus misalign_dataset_load(const char *questions_path,
                                          const char *human_path,
                                          const char *llm_path,
                                          struct MisalignDataset **out);

/**
 * Releases a dataset. Null is ignored.
 *
 * # Safety
 * `dataset` must come from [`misalign_dataset_load`] and not be freed twice.
 */
void misalign_dataset_free(struct MisalignDataset *dataset);

/**
 * Runs the configured tests over every pair of `dataset`.
 *
 * # Safety
 * `dataset` and `config` must be valid; `out` must be writable.
 */
enum MisalignStatus misalign_run_tests(const struct MisalignDataset *dataset,
                                       const struct MisalignTestConfig *config,
                                       struct MisalignReport **out);

/**
 * Releases a report. Null is ignored.
 *
 * # Safety
 * `report` must come from [`misalign_run_tests`] and not be freed twice.
 */
void misalign_report_free(struct MisalignReport *report);

/**
 * Writes report.json, s_metric.csv, q_metric.csv and decisions.csv into `dir`.
 *
 * # Safety
 * `report` must be valid and `dir` a NUL-terminated string.
 */
enum MisalignStatus misalign_report_write_dir(const struct MisalignReport *report, const char *dir);

/**
 * The report as JSON. Release with [`misalign_string_free`].
 *
 * # Safety
 * `report` must be valid; `out` must be writable.
 */
enum MisalignStatus misalign_report_to_json(const struct MisalignReport *report, char **out);

/**
 * S score of `subgroup` (written `dimension:value`) for one statistic.
 *
 * # Safety
 * `report` must be valid, `subgroup` NUL-terminated, `out` writable.
 */
enum MisalignStatus misalign_report_s_metric(const struct MisalignReport *report,
                                             const char *subgroup,
                                             enum MisalignStatistic statistic,
                                             struct MisalignRatio *out);

/**
 * Q score of `question_id` for one statistic.
 *
 * # Safety
 * `report` must be valid, `question_id` NUL-terminated, `out` writable.
 */
enum MisalignStatus misalign_report_q_metric(const struct MisalignReport *report,
                                             const char *question_id,
                                             enum MisalignStatistic statistic,
                                             struct MisalignRatio *out);

/**
 * T1 statistic of two count vectors of length `k`.
 *
 * # Safety
 * `human` and `llm` must each point to `k` values; `out` must be writable.
 */
enum MisalignStatus misalign_t1_statistic(const uint64_t *human,
                                          const uint64_t *llm,
                                          size_t k,
                                          double *out);

/**
 * Two-sample KS statistic of two count vectors of length `k`.
 *
 * # Safety
 * `human` and `llm` must each point to `k` values; `out` must be writable.
 */
enum MisalignStatus misalign_ks_statistic(const uint64_t *human,
                                          const uint64_t *llm,
                                          size_t k,
                                          double *out);

/**
 * Tests one pair with one statistic using the alpha / permutation settings
 * of `config` (its `statistics` field is ignored).
 *
 * # Safety
 * Count arrays must hold `k` values; `config` must be valid; `out` writable.
 */
enum MisalignStatus misalign_decide(const uint64_t *human,
                                    const uint64_t *llm,
                                    size_t k,
                                    enum MisalignStatistic statistic,
                                    const struct MisalignTestConfig *config,
                                    struct MisalignDecision *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MISALIGN_H */
