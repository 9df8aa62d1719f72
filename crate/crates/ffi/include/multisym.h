/* C API for the multisym multisymplectic field-theory workbench. */

#ifndef MULTISYM_H
#define MULTISYM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Success.
#define MS_OK 0

// At least one verified identity failed.
#define MS_ERR_IDENTITY 1

// Bad input: file, schema, expression or dimension error.
#define MS_ERR_INPUT 2

// Numeric failure (Newton divergence, CFL violation, ...).
#define MS_ERR_NUMERIC 3

// Null pointer or malformed UTF-8 argument.
#define MS_ERR_ARGUMENT 4

// Opaque handle to a validated theory specification.
typedef struct MsTheory MsTheory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Parse a theory spec from a JSON string. On success stores a new
// handle in `out` and returns `MS_OK`.
//
// # Safety
// `json` must be NUL-terminated; `out` must be a valid pointer.
int ms_theory_from_json(const char *json, struct MsTheory **out);

// Load a theory spec from a JSON file.
//
// # Safety
// `path` must be NUL-terminated; `out` must be a valid pointer.
int ms_theory_load(const char *path, struct MsTheory **out);

// Release a theory handle. Passing null is a no-op.
//
// # Safety
// `theory` must have come from `ms_theory_load`/`ms_theory_from_json`
// and must not be used afterwards.
void ms_theory_free(struct MsTheory *theory);

// The theory's name as a newly allocated string (release with
// `ms_string_free`). Returns null on a null handle.
//
// # Safety
// `theory` must be a valid handle or null.
char *ms_theory_name(const struct MsTheory *theory);

// Run `derive`, `classify`, `verify` or `solve` against a theory and
// store the JSON report in `report_out` (release with
// `ms_string_free`). The return value mirrors the CLI exit codes:
// `MS_OK`, `MS_ERR_IDENTITY` (report still written), `MS_ERR_INPUT`
// or `MS_ERR_NUMERIC`.
//
// # Safety
// `theory` must be a valid handle; `command` NUL-terminated;
// `report_out` a valid pointer.
int ms_run(const struct MsTheory *theory, const char *command, char **report_out);

// Release a string returned by this library. Passing null is a no-op.
//
// # Safety
// `s` must have been returned by this library and not freed before.
void ms_string_free(char *s);

// Message for the most recent failure on this thread, or null. The
// pointer stays valid until the next failing call on the same thread;
// do not free it.
const char *ms_last_error(void);

// Library version as a static string; do not free.
const char *ms_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MULTISYM_H */
