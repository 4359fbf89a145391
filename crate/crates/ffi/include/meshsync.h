#ifndef MESHSYNC_H
#define MESHSYNC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MsStatus {
  MS_STATUS_OK = 0,
  MS_STATUS_NULL_POINTER = 1,
  MS_STATUS_INVALID_ARGUMENT = 2,
  MS_STATUS_INVALID_CONFIG = 3,
  MS_STATUS_BUFFER_TOO_SMALL = 4,
  MS_STATUS_DECODE = 5,
  MS_STATUS_EMPTY = 6,
  MS_STATUS_SCENARIO = 7,
  MS_STATUS_PANIC = 99,
} MsStatus;

typedef enum MsRole {
  MS_ROLE_PROCESSING = 0,
  MS_ROLE_RESPONDER_BEFORE = 1,
  MS_ROLE_INITIATOR = 2,
  MS_ROLE_RESPONDER_AFTER = 3,
} MsRole;

/**
 * Opaque node handle.
 */
typedef struct MsNode MsNode;

/**
 * Protocol timing. Durations in microseconds.
 */
typedef struct MsTiming {
  uint64_t t_proc_us;
  uint64_t t_slot_us;
  uint64_t t_beacon_us;
  uint8_t n_slot;
  double p_grant;
  uint32_t n_max;
  uint8_t h_na;
} MsTiming;

/**
 * Header fields of an encoded frame.
 */
typedef struct MsFrameInfo {
  bool is_data;
  uint8_t sender;
  uint8_t sender_slot;
  uint8_t sender_hop;
  uint32_t neighbor_count;
  /**
   * Data frames only; 0 otherwise.
   */
  uint8_t origin;
  uint16_t sequence;
  /**
   * 0 for broadcast or beacon.
   */
  uint8_t next_hop;
  uint32_t payload_len;
} MsFrameInfo;

/**
 * Outcome of one simulated realization. Times in microseconds; a negative
 * consensus time means the run never settled.
 */
typedef struct MsRunSummary {
  int64_t consensus_time_us;
  uint32_t final_victims;
  uint32_t max_victims_last_40s;
  uint32_t nodes_on;
  double hop_accuracy;
  uint32_t slot_conflicts;
  uint64_t transmissions;
  uint64_t receptions;
  uint32_t deliveries;
} MsRunSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread, NUL-terminated and
 * truncated to `cap`. Returns the untruncated length.
 *
 * # Safety
 * `buf` must be valid for `cap` bytes or null with `cap == 0`.
 */
size_t ms_last_error(char *buf, size_t cap);

/**
 * Published timing with the given slot count and grant probability.
 *
 * # Safety
 * `timing` must point to writable memory for one `MsTiming`.
 */
enum MsStatus ms_timing_default(uint8_t n_slot, double p_grant, struct MsTiming *timing);

/**
 * Creates a node in the processing state. Randomness comes from `seed`.
 *
 * # Safety
 * `timing` must be readable; `node` must be writable.
 */
enum MsStatus ms_node_new(const struct MsTiming *timing,
                          uint8_t id,
                          bool is_reference,
                          uint8_t initial_slot,
                          uint64_t seed,
                          struct MsNode **node);

/**
 * Releases a node. Null is ignored.
 *
 * # Safety
 * `node` must come from `ms_node_new` and not be used afterwards.
 */
void ms_node_free(struct MsNode *node);

/**
 * # Safety
 * `node` must be a live handle; `role` must be writable.
 */
enum MsStatus ms_node_role(const struct MsNode *node, enum MsRole *role);

/**
 * # Safety
 * `node` must be a live handle; `slot` must be writable.
 */
enum MsStatus ms_node_slot(const struct MsNode *node, uint8_t *slot);

/**
 * # Safety
 * `node` must be a live handle; `hop` must be writable.
 */
enum MsStatus ms_node_hop(const struct MsNode *node, uint8_t *hop);

/**
 * Microseconds until the node's timer fires.
 *
 * # Safety
 * `node` must be a live handle; `remaining_us` must be writable.
 */
enum MsStatus ms_node_timer(const struct MsNode *node, uint64_t *remaining_us);

/**
 * Fires the timer at absolute time `now_us`. If the node starts
 * transmitting, the frame is queued for [`ms_node_take_frame`].
 *
 * # Safety
 * `node` must be a live handle.
 */
enum MsStatus ms_node_timer_expired(struct MsNode *node, uint64_t now_us);

/**
 * Hands a received frame to the node. `rssi_dbm` is ignored when NaN.
 *
 * # Safety
 * `node` must be a live handle and `data` valid for `len` bytes.
 */
enum MsStatus ms_node_receive(struct MsNode *node,
                              const uint8_t *data,
                              size_t len,
                              uint64_t now_us,
                              double rssi_dbm);

/**
 * Pops the oldest frame the node wants on air. Returns `Empty` when none is
 * queued and `BufferTooSmall` (frame kept) when `cap` is short; `written`
 * receives the frame size in both the success and short-buffer cases.
 *
 * # Safety
 * `node` must be a live handle, `buf` valid for `cap` bytes, `written` writable.
 */
enum MsStatus ms_node_take_frame(struct MsNode *node, uint8_t *buf, size_t cap, size_t *written);

/**
 * Queues an application payload originated at this node.
 *
 * # Safety
 * `node` must be a live handle, `payload` valid for `len` bytes, `sequence` writable.
 */
enum MsStatus ms_node_inject(struct MsNode *node,
                             const uint8_t *payload,
                             size_t len,
                             uint16_t *sequence);

/**
 * Pops the oldest message delivered to this (reference) node.
 *
 * # Safety
 * `node` must be a live handle; every pointer must be writable, `buf` for `cap` bytes.
 */
enum MsStatus ms_node_take_delivery(struct MsNode *node,
                                    uint8_t *origin,
                                    uint16_t *sequence,
                                    uint8_t *buf,
                                    size_t cap,
                                    size_t *written);

/**
 * Decodes a frame and reports its header.
 *
 * # Safety
 * `data` must be valid for `len` bytes; `info` writable.
 */
enum MsStatus ms_frame_inspect(const uint8_t *data, size_t len, struct MsFrameInfo *info);

/**
 * Codec error number of a buffer: 0 when it decodes, otherwise the codec's
 * error code (1 truncated, 2 version, 3 frame type, 4 length, 5 field).
 *
 * # Safety
 * `data` must be valid for `len` bytes; `code` writable.
 */
enum MsStatus ms_frame_check(const uint8_t *data, size_t len, int32_t *code);

/**
 * Runs one realization of a built-in preset.
 *
 * # Safety
 * `name` must be a NUL-terminated string; `summary` writable.
 */
enum MsStatus ms_run_preset(const char *name, uint64_t seed, struct MsRunSummary *summary);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MESHSYNC_H */
