#pragma once

// Binary artifact formats. Everything here works on byte strings; only the
// command-line tool touches files.
//
// SFD1 (little-endian):
//   "SFD1" | u16 version | u16 flags | u32 n_traj, n_frames, rows, cols |
//   u64 crc64(payload) | payload: f32 in (traj, frame, row, col) order |
//   [flags & 1] u32 n_pairs | u32 0 | u64 crc64(records) |
//     records: u64 instance_id, m_i bits, m_o bits (row-major, LSB first, ceil(rows*cols/8) bytes each)
//
// SCK1 (little-endian):
//   "SCK1" | u16 version | u16 0 | u32 meta_len | u64 n_params |
//   u64 crc64(meta, params, adam_m, adam_v) | meta (JSON text) | f32 params | f32 m | f32 v

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "grid.hpp"

namespace solid::io {

inline constexpr std::uint16_t kContainerVersion = 1;
inline constexpr std::uint16_t kCheckpointVersion = 1;
inline constexpr std::size_t kContainerHeaderBytes = 32;

/// CRC-64/XZ (ECMA-182 polynomial, reflected, all-ones init and xor-out).
std::uint64_t crc64(std::span<const std::uint8_t> bytes);
std::uint64_t crc64(std::string_view bytes);

struct MaskRecord {
  std::uint64_t instance_id = 0;
  Mask m_i;
  Mask m_o;
};

struct Container {
  std::uint32_t n_traj = 0;
  std::uint32_t n_frames = 0;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<float> payload;  // n_traj * n_frames * rows * cols
  std::vector<MaskRecord> masks;

  std::size_t frame_size() const { return std::size_t(rows) * cols; }
  Field frame(std::size_t traj, std::size_t frame) const;
  void set_frame(std::size_t traj, std::size_t frame, const Field& f);
  /// Allocates a zeroed payload.
  static Container with_shape(std::uint32_t n_traj, std::uint32_t n_frames, std::uint32_t rows,
                              std::uint32_t cols);
};

/// Payload size declared by a header: n_traj * n_frames * rows * cols * 4.
std::uint64_t payload_bytes(std::uint32_t n_traj, std::uint32_t n_frames, std::uint32_t rows,
                            std::uint32_t cols);

std::string encode_container(const Container& c);
/// Errors: Data (bad magic), Version, Truncated, Checksum.
Container decode_container(std::string_view bytes);

struct Checkpoint {
  std::string meta;  // JSON text: model config, step, normalization, seeds
  std::vector<float> params;
  std::vector<float> adam_m;
  std::vector<float> adam_v;
};

std::string encode_checkpoint(const Checkpoint& c);
Checkpoint decode_checkpoint(std::string_view bytes);

}  // namespace solid::io
