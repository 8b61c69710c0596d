/* C interface to the polsense polarization sensing library. */

#ifndef POLSENSE_H
#define POLSENSE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Alarm classes reported by the detector, mirrored as stable integers.
 */
typedef enum PolsenseAlarmClass {
  PolsenseAlarmClass_PrecursorImpulsive = 0,
  PolsenseAlarmClass_PrecursorSustained = 1,
  PolsenseAlarmClass_Impulsive = 2,
  PolsenseAlarmClass_Break = 3,
  PolsenseAlarmClass_LossOfSignal = 4,
} PolsenseAlarmClass;

/**
 * Result of every API call.
 */
typedef enum PolsenseStatus {
  /**
   * The call succeeded.
   */
  PolsenseStatus_Ok = 0,
  /**
   * A pointer argument was NULL or an index was out of range.
   */
  PolsenseStatus_InvalidArgument = 1,
  /**
   * A scenario failed to parse or validate.
   */
  PolsenseStatus_BadScenario = 2,
  /**
   * Simulation or detection failed; see `polsense_last_error`.
   */
  PolsenseStatus_RuntimeError = 3,
} PolsenseStatus;

/**
 * Opaque handle to a detection report.
 */
typedef struct PolsenseReport PolsenseReport;

/**
 * Opaque handle to a validated event script.
 */
typedef struct PolsenseScenario PolsenseScenario;

/**
 * Opaque handle to a simulated Stokes time series.
 */
typedef struct PolsenseSopSeries PolsenseSopSeries;

/**
 * One Stokes sample: time, the four Stokes components, and a validity flag
 * (0 after loss of signal).
 */
typedef struct PolsenseSopSample {
  double t_s;
  double s0;
  double s1;
  double s2;
  double s3;
  uint8_t valid;
} PolsenseSopSample;

/**
 * One detector alarm.
 */
typedef struct PolsenseAlarm {
  double t_s;
  enum PolsenseAlarmClass class_;
  double score;
  double run_length_s;
} PolsenseAlarm;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Returns the error message from the most recent failing call on this
 * thread. The pointer stays valid until the next failing call; never free
 * it.
 */
const char *polsense_last_error(void);

/**
 * Loads a built-in scenario preset (`baseline`, `break-demo`, or
 * `mains-only`) into a new handle.
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PolsenseStatus polsense_scenario_preset(const char *name, struct PolsenseScenario **out);

/**
 * Parses a TOML scenario into a new handle.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PolsenseStatus polsense_scenario_parse(const char *text, struct PolsenseScenario **out);

/**
 * Releases a scenario handle.
 *
 * # Safety
 * `scenario` must have come from this library, and must not be used again.
 */
void polsense_scenario_free(struct PolsenseScenario *scenario);

/**
 * Simulates the scenario's channel and samples the output state of
 * polarization every `period_s` seconds.
 *
 * # Safety
 * `scenario` must be a live handle and `out` a valid pointer.
 */
enum PolsenseStatus polsense_simulate_sop(const struct PolsenseScenario *scenario,
                                          double period_s,
                                          struct PolsenseSopSeries **out);

/**
 * Number of samples in a series.
 *
 * # Safety
 * `series` must be a live handle; NULL yields 0.
 */
uintptr_t polsense_sop_len(const struct PolsenseSopSeries *series);

/**
 * Copies up to `capacity` samples starting at `offset` into `buf`, returning
 * the number copied through `copied`.
 *
 * # Safety
 * `buf` must point to at least `capacity` samples; other pointers must be
 * valid.
 */
enum PolsenseStatus polsense_sop_copy(const struct PolsenseSopSeries *series,
                                      uintptr_t offset,
                                      struct PolsenseSopSample *buf,
                                      uintptr_t capacity,
                                      uintptr_t *copied);

/**
 * Releases a series handle.
 *
 * # Safety
 * `series` must have come from this library, and must not be used again.
 */
void polsense_sop_free(struct PolsenseSopSeries *series);

/**
 * Runs the full detection pipeline on a series with default thresholds,
 * training the noise baseline on the leading `train_frac` of the record.
 *
 * # Safety
 * `series` must be a live handle and `out` a valid pointer.
 */
enum PolsenseStatus polsense_detect(const struct PolsenseSopSeries *series,
                                    double train_frac,
                                    struct PolsenseReport **out);

/**
 * Number of alarms in a report.
 *
 * # Safety
 * `report` must be a live handle; NULL yields 0.
 */
uintptr_t polsense_report_alarm_count(const struct PolsenseReport *report);

/**
 * Fetches one alarm by index.
 *
 * # Safety
 * `report` must be a live handle and `out` a valid pointer.
 */
enum PolsenseStatus polsense_report_alarm(const struct PolsenseReport *report,
                                          uintptr_t index,
                                          struct PolsenseAlarm *out);

/**
 * Time of the loss-of-signal event, or NaN if none was detected.
 *
 * # Safety
 * `report` must be a live handle; NULL yields NaN.
 */
double polsense_report_los_time(const struct PolsenseReport *report);

/**
 * Releases a report handle.
 *
 * # Safety
 * `report` must have come from this library, and must not be used again.
 */
void polsense_report_free(struct PolsenseReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POLSENSE_H */
