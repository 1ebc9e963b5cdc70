/* C interface to the panelinfer library.
 *
 * Conventions:
 *   - Every fallible call returns a PiStatus; PI_OK means success.
 *   - Out-parameters are written only on PI_OK.
 *   - On failure, pi_last_error() returns a message for the most recent
 *     failing call on the calling thread; the pointer stays valid until the
 *     next failing call on that thread.
 *   - Handles returned by constructors are owned by the caller and released
 *     with the matching *_free function; freeing NULL is a no-op.
 *   - No call unwinds across this boundary; internal panics surface as
 *     PI_INTERNAL.
 */

#ifndef PANELINFER_H
#define PANELINFER_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum PiStatus {
  PI_OK = 0,
  PI_NULL_ARG = 1,
  PI_PARSE_ERROR = 2,
  PI_INVALID_INPUT = 3,
  PI_NUMERICAL = 4,
  PI_UTF8 = 5,
  PI_IO = 6,
  PI_INTERNAL = 7,
} PiStatus;

/* Opaque handles. */
typedef struct PiPanel PiPanel;
typedef struct PiReport PiReport;

/* Message for the most recent failure on this thread. Never NULL; empty
 * before any failure. */
const char *pi_last_error(void);

/* Reads a long-format CSV (header `unit,time,value`) into a panel. */
PiStatus pi_panel_read_long_csv(const char *path, PiPanel **out);

/* Builds a balanced panel from a dense row-major n_units x n_times array. */
PiStatus pi_panel_from_dense(const double *values, size_t n_units,
                             size_t n_times, PiPanel **out);

/* Releases a panel handle. */
void pi_panel_free(PiPanel *p);

PiStatus pi_panel_n_units(const PiPanel *p, size_t *out);
PiStatus pi_panel_n_times(const PiPanel *p, size_t *out);

/* Max-type statistic for equality of unit means:
 * max_i |sqrt(T_i) (mean_i - grand mean)|. */
PiStatus pi_q_statistic(const PiPanel *p, double *out);

/* Bootstrap homogeneity test with a Bartlett kernel. bandwidth == 0 selects
 * the default floor(1.75 T^(1/3)). `level` is the confidence level the
 * report's decision refers to, e.g. 0.95. */
PiStatus pi_test_homogeneity(const PiPanel *p, size_t bandwidth, size_t reps,
                             double level, uint64_t seed, PiReport **out);

PiStatus pi_report_statistic(const PiReport *r, double *out);

/* Finite-sample p-value (1 + #{draws >= statistic}) / (reps + 1). */
PiStatus pi_report_p_value(const PiReport *r, double *out);

/* Decision at the level the test was run with: 1 = reject, 0 = keep. */
PiStatus pi_report_decision(const PiReport *r, int *out);

/* Releases a report handle. */
void pi_report_free(PiReport *r);

/* Exact grouping of n means into j groups by smallest within-group sum of
 * squares. Writes n labels (0-based, groups ordered by ascending center)
 * into assignments_out and j centers into centers_out. */
PiStatus pi_group_means(const double *means, size_t n, size_t j,
                        size_t *assignments_out, double *centers_out);

#ifdef __cplusplus
}
#endif

#endif /* PANELINFER_H */
