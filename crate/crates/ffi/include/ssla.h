#ifndef SSLA_H
#define SSLA_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SslaStatus {
  SSLA_STATUS_OK = 0,
  SSLA_STATUS_NULL_POINTER = 1,
  SSLA_STATUS_INVALID_UTF8 = 2,
  SSLA_STATUS_PARSE = 3,
  SSLA_STATUS_IO = 4,
  SSLA_STATUS_TRANSLATION = 5,
  /**
   * The audited record is not valid evidence.
   */
  SSLA_STATUS_INVALID = 6,
  SSLA_STATUS_PANIC = 7,
} SslaStatus;

/**
 * Opaque knowledge base handle.
 */
typedef struct SslaKb SslaKb;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread, or null. Valid until the
 * next call into this library from the same thread.
 */
const char *ssla_last_error_message(void);

/**
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void ssla_string_free(char *s);

/**
 * Load a knowledge base directory.
 *
 * # Safety
 * `dir` must be a NUL-terminated string; `out` must be writable.
 */
enum SslaStatus ssla_kb_load_dir(const char *dir, struct SslaKb **out);

/**
 * # Safety
 * `kb` must come from [`ssla_kb_load_dir`] and not have been freed.
 */
void ssla_kb_free(struct SslaKb *kb);

/**
 * Translate one expression toward `goal` (e.g. `"Function"`). Writes a
 * JSON array of expressions to `out`.
 *
 * # Safety
 * Pointers must be valid; strings NUL-terminated.
 */
enum SslaStatus ssla_kb_translate(const struct SslaKb *kb,
                                  const char *expression,
                                  const char *goal,
                                  char **out);

/**
 * Decide one requirement against a JSON array of capabilities.
 *
 * # Safety
 * Pointers must be valid; strings NUL-terminated.
 */
enum SslaStatus ssla_decide(const struct SslaKb *kb,
                            const char *requirement,
                            const char *capabilities_json,
                            bool *satisfied);

/**
 * Parse an expression and write its canonical text.
 *
 * # Safety
 * `expression` must be NUL-terminated; `out` writable.
 */
enum SslaStatus ssla_expression_normalize(const char *expression, char **out);

/**
 * Audit a stored record against PEM public keys. Returns `Ok` for valid
 * evidence and `Invalid` otherwise; either way the JSON report is written
 * to `report`.
 *
 * # Safety
 * `record` must point to `record_len` bytes; `keys` to `key_count`
 * NUL-terminated strings.
 */
enum SslaStatus ssla_audit_record(const uint8_t *record,
                                  size_t record_len,
                                  const char *const *keys,
                                  size_t key_count,
                                  char **report);

/**
 * Whether two stored records are the same evidence.
 *
 * # Safety
 * Each buffer must hold the stated number of bytes.
 */
enum SslaStatus ssla_compare_evidence(const uint8_t *a,
                                      size_t a_len,
                                      const uint8_t *b,
                                      size_t b_len,
                                      bool *identical);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SSLA_H */
