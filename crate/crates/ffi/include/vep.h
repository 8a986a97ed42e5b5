#ifndef VEP_H
#define VEP_H

/* Generated by cbindgen from the vep-ffi crate. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum VepStatus {
  VEP_STATUS_OK = 0,
  VEP_STATUS_NULL_POINTER = 1,
  VEP_STATUS_INVALID_ARGUMENT = 2,
  VEP_STATUS_PARSE = 3,
  VEP_STATUS_DOMAIN = 4,
  VEP_STATUS_DECODE = 5,
  VEP_STATUS_LEDGER = 6,
  VEP_STATUS_IO = 7,
  VEP_STATUS_PANIC = 8,
} VepStatus;

// Which node's delay a consensus prediction refers to.
typedef enum VepViewpoint {
  VEP_VIEWPOINT_ALL_NODES = 0,
  VEP_VIEWPOINT_PRIMARY = 1,
} VepViewpoint;

// Period distribution of a periodic message generator.
typedef struct VepDistribution VepDistribution;

// A decoded frame.
typedef struct VepFrame VepFrame;

// A station's copy of a localchain.
typedef struct VepLocalchain VepLocalchain;

// Flat summary of a decoded frame.
typedef struct VepFrameInfo {
  uint8_t msg_type;
  uint32_t sender;
  uint64_t timestamp_ms;
  uint64_t seq;
  size_t frame_len;
  size_t base_len;
  // The magic was found after the base message.
  bool extension_present;
  // The extension region parsed cleanly.
  bool extension_valid;
  uint16_t sp_id;
  uint32_t event_id;
  bool has_ledger;
  bool has_consensus;
  bool has_token;
} VepFrameInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next call into this library on the same thread.
const char *vep_last_error(void);

// Library version as a static string.
const char *vep_version(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not be freed twice.
void vep_string_free(char *s);

// Parses a distribution from TOML or JSON text (a `support` list of
// `period_ms`/`probability` points).
//
// # Safety
// `text` must be a valid C string and `out` a valid pointer.
enum VepStatus vep_dist_parse(const char *text, struct VepDistribution **out_dist);

// Builds a distribution from parallel arrays of periods and probabilities.
//
// # Safety
// Both arrays must hold `len` elements; `out_dist` must be valid.
enum VepStatus vep_dist_from_points(const uint64_t *periods_ms,
                                    const double *probabilities,
                                    size_t len,
                                    struct VepDistribution **out_dist);

// # Safety
// `d` must come from this library and not be freed twice.
void vep_dist_free(struct VepDistribution *d);

// Mean period in milliseconds.
//
// # Safety
// Pointers must be valid.
enum VepStatus vep_dist_mean(const struct VepDistribution *d, double *out_ms);

// Mean wait until the next emission, seen from a random instant.
//
// # Safety
// Pointers must be valid.
enum VepStatus vep_waiting_mean(const struct VepDistribution *d, double *out_ms);

// P(wait <= `w_ms`).
//
// # Safety
// Pointers must be valid.
enum VepStatus vep_waiting_cdf(const struct VepDistribution *d, double w_ms, double *out_p);

// Expected delay of a queued extension with `j` entries ahead of it.
//
// # Safety
// Pointers must be valid.
enum VepStatus vep_queued_delay(const struct VepDistribution *d, size_t j, double *out_ms);

// Mean of the `g`-th smallest of `m` independent waits.
//
// # Safety
// Pointers must be valid.
enum VepStatus vep_order_stat_mean(const struct VepDistribution *d,
                                   size_t m,
                                   size_t g,
                                   double *out_ms);

// Expected three-stage consensus delay for `n` members.
//
// # Safety
// Pointers must be valid.
enum VepStatus vep_pbft_delay(const struct VepDistribution *d,
                              size_t n,
                              enum VepViewpoint viewpoint,
                              double *out_ms);

// Expected delay until all `participants` have sent a verification.
//
// # Safety
// Pointers must be valid.
enum VepStatus vep_verification_delay(const struct VepDistribution *d,
                                      size_t participants,
                                      double *out_ms);

// Overhead of `extension_len` bytes on `packet_len`-byte packets when
// `extended` of `total` packets carry one. Either output may be null.
//
// # Safety
// Non-null output pointers must be valid.
enum VepStatus vep_overhead(double extension_len,
                            double packet_len,
                            double extended,
                            double total,
                            double *out_per_packet_pct,
                            double *out_expected_pct);

// Time on air of a `len`-byte frame, in microseconds.
double vep_airtime_us(size_t len, double bitrate_bps, double phy_overhead_us);

// Delay after `r` retransmission timeouts of `tau_d_ms` each.
double vep_retrans_delay(double tau_p_ms, uint32_t r, double tau_d_ms);

// Decodes a frame. A damaged extension does not fail the call; it shows
// up as `extension_present && !extension_valid`.
//
// # Safety
// `data` must hold `len` bytes; `out_frame` must be valid.
enum VepStatus vep_frame_decode(const uint8_t *data, size_t len, struct VepFrame **out_frame);

// # Safety
// `f` must come from this library and not be freed twice.
void vep_frame_free(struct VepFrame *f);

// # Safety
// Pointers must be valid.
enum VepStatus vep_frame_info(const struct VepFrame *f, struct VepFrameInfo *out_info);

// JSON description of the frame; free with [`vep_string_free`].
//
// # Safety
// Pointers must be valid.
enum VepStatus vep_frame_json(const struct VepFrame *f, char **out_json);

// # Safety
// `out_chain` must be valid.
enum VepStatus vep_localchain_new(uint32_t localchain_id, struct VepLocalchain **out_chain);

// # Safety
// `c` must come from this library and not be freed twice.
void vep_localchain_free(struct VepLocalchain *c);

// Stored blocks, genesis included.
//
// # Safety
// Pointers must be valid.
enum VepStatus vep_localchain_len(const struct VepLocalchain *c, size_t *out_len);

// Blocks with no stored child.
//
// # Safety
// Pointers must be valid.
enum VepStatus vep_localchain_tip_count(const struct VepLocalchain *c, size_t *out_count);

// # Safety
// `out_hash` must point to 32 writable bytes.
enum VepStatus vep_localchain_genesis_hash(const struct VepLocalchain *c, uint8_t *out_hash);

// Forges a block from `count` encoded frames, in the given order, on top
// of `prev_hash` (32 bytes), appends it, and writes its hash to
// `out_hash`. `info_flag` is 0 (none), 1 (success) or 2 (failure).
// Signatures are not checked.
//
// # Safety
// `frames` and `lens` must hold `count` entries, each frame `lens[i]`
// bytes; `prev_hash` and `out_hash` must point to 32 bytes.
enum VepStatus vep_localchain_forge(struct VepLocalchain *c,
                                    const uint8_t *prev_hash,
                                    const uint8_t *const *frames,
                                    const size_t *lens,
                                    size_t count,
                                    uint8_t info_flag,
                                    uint8_t *out_hash);

// Runs a scenario file. When `out_dir` is non-null the usual output
// files are written there. A JSON summary (metrics plus report) is
// returned through `out_json`, which may be null.
//
// # Safety
// `path` must be a valid C string; `out_dir` null or a valid C string.
enum VepStatus vep_run_scenario(const char *path, const char *out_dir, char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VEP_H */
