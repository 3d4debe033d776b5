#ifndef HWGN2_H
#define HWGN2_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  HWGN2_STATUS_OK = 0,
  HWGN2_STATUS_NULL_ARGUMENT = 1,
  HWGN2_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Malformed model, program or input.
   */
  HWGN2_STATUS_PARSE = 3,
  /**
   * The session aborted.
   */
  HWGN2_STATUS_PROTOCOL = 4,
  /**
   * The caller's buffer is too small; the needed length was written.
   */
  HWGN2_STATUS_BUFFER_TOO_SMALL = 5,
  HWGN2_STATUS_PANIC = 6,
} Hwgn2Status;

/**
 * An assembled or compiled program.
 */
typedef struct Hwgn2Program Hwgn2Program;

/**
 * Outcome of a finished session.
 */
typedef struct Hwgn2Result Hwgn2Result;

typedef struct {
  uint64_t instructions;
  uint64_t dmem_words;
  bool include_mult;
  uint32_t input_base;
  uint32_t input_words;
  uint32_t output_base;
  uint32_t output_words;
} Hwgn2ProgramInfo;

typedef struct {
  uint64_t rounds;
  uint64_t bytes_garbler_to_evaluator;
  uint64_t bytes_evaluator_to_garbler;
  uint64_t peak_resident_tables;
  uint64_t peak_resident_labels;
  uint64_t step_count;
} Hwgn2CommStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * Valid until the next call into this library on the same thread.
 */
const char *hwgn2_last_error(void);

/**
 * Assembles program text.
 *
 * # Safety
 * `source` must be a NUL-terminated string; `program` must be writable.
 */
Hwgn2Status hwgn2_program_assemble(const char *source, Hwgn2Program **program);

/**
 * Compiles a JSON model. With `bnn`, an MLP is binarized first.
 *
 * # Safety
 * `model_json` must be a NUL-terminated string; `program` must be writable.
 */
Hwgn2Status hwgn2_program_compile(const char *model_json, bool bnn, Hwgn2Program **program);

/**
 * # Safety
 * `program` must come from this library; `info` must be writable.
 */
Hwgn2Status hwgn2_program_info(const Hwgn2Program *program, Hwgn2ProgramInfo *info);

/**
 * Program text; release with [`hwgn2_string_free`].
 *
 * # Safety
 * `program` must come from this library; `source` must be writable.
 */
Hwgn2Status hwgn2_program_disassemble(const Hwgn2Program *program, char **source);

/**
 * # Safety
 * `program` must come from this library and not be used afterwards.
 */
void hwgn2_program_free(Hwgn2Program *program);

/**
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void hwgn2_string_free(char *s);

/**
 * Packs pixel values 0..=255 four per word, as compiled MLPs expect.
 *
 * # Safety
 * `pixels` must hold `n` values; `words` must hold `cap` words.
 */
Hwgn2Status hwgn2_encode_pixels(const int32_t *pixels,
                                size_t n,
                                uint32_t *words,
                                size_t cap,
                                size_t *len);

/**
 * Runs garbler and evaluator in this process. `mode` is `"full"` or
 * `"stream:K"`, `security` is `"hbc"` or `"malicious:S"`, `seed` is 32
 * bytes. The OT group follows `HWGN2_PROFILE`.
 *
 * # Safety
 * Pointers must be valid for the given lengths; `result` must be writable.
 */
Hwgn2Status hwgn2_run_loopback(const Hwgn2Program *program,
                               const uint32_t *input,
                               size_t input_words,
                               const char *mode,
                               const char *security,
                               const uint8_t *seed,
                               Hwgn2Result **result);

/**
 * Output words. Fails with `BufferTooSmall` (and the needed length in
 * `len`) when `cap` is short.
 *
 * # Safety
 * `result` must come from this library; `words` must hold `cap` words.
 */
Hwgn2Status hwgn2_result_output(const Hwgn2Result *result,
                                uint32_t *words,
                                size_t cap,
                                size_t *len);

/**
 * # Safety
 * `result` must come from this library; `stats` must be writable.
 */
Hwgn2Status hwgn2_result_stats(const Hwgn2Result *result, Hwgn2CommStats *stats);

/**
 * Cut-and-choose verdict: `*cheat_copy` is -1 when the run was accepted,
 * otherwise the index of a copy that failed its audit.
 *
 * # Safety
 * `result` must come from this library; `cheat_copy` must be writable.
 */
Hwgn2Status hwgn2_result_verdict(const Hwgn2Result *result, int64_t *cheat_copy);

/**
 * # Safety
 * `result` must come from this library and not be used afterwards.
 */
void hwgn2_result_free(Hwgn2Result *result);

/**
 * Round trips of a session over `steps` processor steps.
 *
 * # Safety
 * `mode` and `security` must be NUL-terminated; `rounds` must be writable.
 */
Hwgn2Status hwgn2_predict_rounds(const char *mode,
                                 const char *security,
                                 uint64_t steps,
                                 uint64_t *rounds);

/**
 * Welch t per sample of two row-major trace matrices with `n_samples`
 * columns. `t` must hold `n_samples` values.
 *
 * # Safety
 * `a` holds `n_a * n_samples` floats, `b` holds `n_b * n_samples`.
 */
Hwgn2Status hwgn2_welch_t(const float *a,
                          size_t n_a,
                          const float *b,
                          size_t n_b,
                          size_t n_samples,
                          double *t);

/**
 * NUL-terminated library version.
 */
const char *hwgn2_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HWGN2_H */
