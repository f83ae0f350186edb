#include "container.hpp"

#include <bit>
#include <boost/crc.hpp>
#include <cstring>

namespace solid::io {

namespace {

using Crc64 = boost::crc_optimal<64, 0x42F0E1EBA9EA3693ull, ~0ull, ~0ull, true, true>;

class Writer {
 public:
  void bytes(std::string_view s) { out_.append(s); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32s(std::span<const float> v) {
    for (float f : v) u32(std::bit_cast<std::uint32_t>(f));
  }
  std::size_t size() const { return out_.size(); }
  std::string& str() { return out_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(char((v >> (8 * i)) & 0xFF));
  }
  std::string out_;
};

class Reader {
 public:
  Reader(std::string_view in, const char* what) : in_(in), what_(what) {}

  std::string_view take(std::size_t n) {
    if (n > in_.size() - pos_) {
      fail(ErrorKind::Truncated, std::string(what_) + ": truncated at byte " + std::to_string(pos_) +
                                     " (need " + std::to_string(n) + ", have " +
                                     std::to_string(in_.size() - pos_) + ")");
    }
    const auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint16_t u16() { return std::uint16_t(get(2)); }
  std::uint32_t u32() { return std::uint32_t(get(4)); }
  std::uint64_t u64() { return get(8); }
  std::vector<float> f32s(std::size_t n) {
    const auto s = take(n * 4);
    std::vector<float> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = std::bit_cast<float>(std::uint32_t(le(s.data() + 4 * i, 4)));
    return out;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  static std::uint64_t le(const char* p, int n) {
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t(std::uint8_t(p[i])) << (8 * i);
    return v;
  }
  std::uint64_t get(int n) { return le(take(std::size_t(n)).data(), n); }

  std::string_view in_;
  std::size_t pos_ = 0;
  const char* what_;
};

std::size_t plane_bytes(std::size_t n) { return (n + 7) / 8; }

void pack(Writer& w, const Mask& m) {
  std::string bits(plane_bytes(m.size()), '\0');
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m[i]) bits[i / 8] = char(std::uint8_t(bits[i / 8]) | (1u << (i % 8)));
  w.bytes(bits);
}

Mask unpack(std::string_view bits, int rows, int cols) {
  Mask m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = (std::uint8_t(bits[i / 8]) >> (i % 8)) & 1u;
  return m;
}

void check_magic(Reader& r, std::string_view magic, const char* what) {
  if (r.remaining() < magic.size()) fail(ErrorKind::Truncated, std::string(what) + ": shorter than its magic");
  if (r.take(magic.size()) != magic) fail(ErrorKind::Data, std::string(what) + ": bad magic");
}

void check_version(std::uint16_t got, std::uint16_t want, const char* what) {
  if (got != want) {
    fail(ErrorKind::Version, std::string(what) + ": version " + std::to_string(got) + " (this build reads " +
                                 std::to_string(want) + ")");
  }
}

}  // namespace

std::uint64_t crc64(std::span<const std::uint8_t> bytes) {
  Crc64 crc;
  crc.process_bytes(bytes.data(), bytes.size());
  return crc.checksum();
}

std::uint64_t crc64(std::string_view bytes) {
  Crc64 crc;
  crc.process_bytes(bytes.data(), bytes.size());
  return crc.checksum();
}

std::uint64_t payload_bytes(std::uint32_t n_traj, std::uint32_t n_frames, std::uint32_t rows,
                            std::uint32_t cols) {
  return std::uint64_t(n_traj) * n_frames * rows * cols * 4u;
}

Container Container::with_shape(std::uint32_t n_traj, std::uint32_t n_frames, std::uint32_t rows,
                                 std::uint32_t cols) {
  Container c;
  c.n_traj = n_traj;
  c.n_frames = n_frames;
  c.rows = rows;
  c.cols = cols;
  c.payload.assign(std::size_t(payload_bytes(n_traj, n_frames, rows, cols) / 4), 0.0f);
  return c;
}

Field Container::frame(std::size_t traj, std::size_t frame) const {
  if (!(traj < n_traj && frame < n_frames)) {
    fail(ErrorKind::Validation, "container: frame (" + std::to_string(traj) + ", " + std::to_string(frame) +
                                    ") out of range");
  }
  Field f(static_cast<int>(rows), static_cast<int>(cols));
  const float* src = payload.data() + (traj * n_frames + frame) * frame_size();
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = double(src[i]);
  return f;
}

void Container::set_frame(std::size_t traj, std::size_t frame, const Field& f) {
  if (!(traj < n_traj && frame < n_frames)) fail(ErrorKind::Validation, "container: set_frame out of range");
  if (!f.same_shape(int(rows), int(cols))) fail(ErrorKind::Shape, "container: set_frame shape mismatch");
  float* dst = payload.data() + (traj * n_frames + frame) * frame_size();
  for (std::size_t i = 0; i < f.size(); ++i) dst[i] = float(f[i]);
}

std::string encode_container(const Container& c) {
  if (c.payload.size() * 4 != payload_bytes(c.n_traj, c.n_frames, c.rows, c.cols)) {
    fail(ErrorKind::Shape, "container: payload length disagrees with header");
  }
  Writer w;
  w.bytes("SFD1");
  w.u16(kContainerVersion);
  w.u16(c.masks.empty() ? 0 : 1);
  w.u32(c.n_traj);
  w.u32(c.n_frames);
  w.u32(c.rows);
  w.u32(c.cols);
  Writer body;
  body.f32s(c.payload);
  w.u64(crc64(body.str()));
  w.bytes(body.str());
  if (!c.masks.empty()) {
    Writer rec;
    for (const auto& m : c.masks) {
      if (!m.m_i.same_shape(int(c.rows), int(c.cols)) || !m.m_o.same_shape(int(c.rows), int(c.cols))) {
        fail(ErrorKind::Shape, "container: mask record shape disagrees with header");
      }
      rec.u64(m.instance_id);
      pack(rec, m.m_i);
      pack(rec, m.m_o);
    }
    w.u32(std::uint32_t(c.masks.size()));
    w.u32(0);
    w.u64(crc64(rec.str()));
    w.bytes(rec.str());
  }
  return std::move(w.str());
}

Container decode_container(std::string_view bytes) {
  Reader r(bytes, "SFD1");
  check_magic(r, "SFD1", "SFD1");
  check_version(r.u16(), kContainerVersion, "SFD1");
  const std::uint16_t flags = r.u16();
  Container c;
  c.n_traj = r.u32();
  c.n_frames = r.u32();
  c.rows = r.u32();
  c.cols = r.u32();
  const std::uint64_t crc = r.u64();
  const std::uint64_t n = payload_bytes(c.n_traj, c.n_frames, c.rows, c.cols);
  if (n > r.remaining()) {
    fail(ErrorKind::Truncated, "SFD1: header declares " + std::to_string(n) + " payload bytes, file holds " +
                                   std::to_string(r.remaining()));
  }
  const auto body = r.take(std::size_t(n));
  if (crc64(body) != crc) fail(ErrorKind::Checksum, "SFD1: payload checksum mismatch");
  Reader pr(body, "SFD1 payload");
  c.payload = pr.f32s(std::size_t(n / 4));
  if (flags & 1u) {
    const std::uint32_t n_pairs = r.u32();
    r.u32();
    const std::uint64_t mcrc = r.u64();
    const std::size_t plane = plane_bytes(std::size_t(c.rows) * c.cols);
    const std::size_t rec_bytes = std::size_t(n_pairs) * (8 + 2 * plane);
    const auto recs = r.take(rec_bytes);
    if (crc64(recs) != mcrc) fail(ErrorKind::Checksum, "SFD1: mask section checksum mismatch");
    Reader mr(recs, "SFD1 masks");
    for (std::uint32_t k = 0; k < n_pairs; ++k) {
      MaskRecord m;
      m.instance_id = mr.u64();
      m.m_i = unpack(mr.take(plane), int(c.rows), int(c.cols));
      m.m_o = unpack(mr.take(plane), int(c.rows), int(c.cols));
      c.masks.push_back(std::move(m));
    }
  }
  if (r.remaining() != 0) fail(ErrorKind::Data, "SFD1: trailing bytes after the last section");
  return c;
}

std::string encode_checkpoint(const Checkpoint& c) {
  const std::size_t n = c.params.size();
  if (c.adam_m.size() != n || c.adam_v.size() != n) {
    fail(ErrorKind::Shape, "SCK1: optimizer moments disagree with parameter count");
  }
  Writer body;
  body.bytes(c.meta);
  body.f32s(c.params);
  body.f32s(c.adam_m);
  body.f32s(c.adam_v);
  Writer w;
  w.bytes("SCK1");
  w.u16(kCheckpointVersion);
  w.u16(0);
  w.u32(std::uint32_t(c.meta.size()));
  w.u64(n);
  w.u64(crc64(body.str()));
  w.bytes(body.str());
  return std::move(w.str());
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader r(bytes, "SCK1");
  check_magic(r, "SCK1", "SCK1");
  check_version(r.u16(), kCheckpointVersion, "SCK1");
  r.u16();
  const std::uint32_t meta_len = r.u32();
  const std::uint64_t n = r.u64();
  const std::uint64_t crc = r.u64();
  const std::uint64_t need = std::uint64_t(meta_len) + 12 * n;
  if (need > r.remaining()) fail(ErrorKind::Truncated, "SCK1: shorter than its header declares");
  const auto body = r.take(std::size_t(need));
  if (crc64(body) != crc) fail(ErrorKind::Checksum, "SCK1: checksum mismatch");
  Reader br(body, "SCK1 body");
  Checkpoint c;
  c.meta = std::string(br.take(meta_len));
  c.params = br.f32s(std::size_t(n));
  c.adam_m = br.f32s(std::size_t(n));
  c.adam_v = br.f32s(std::size_t(n));
  if (r.remaining() != 0) fail(ErrorKind::Data, "SCK1: trailing bytes");
  return c;
}

}  // namespace solid::io
