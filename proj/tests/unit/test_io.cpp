#include <doctest.h>

#include <cmath>
#include <set>

#include "config.hpp"
#include "container.hpp"
#include "image.hpp"

using namespace solid;

namespace {

template <class F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an Error");
  return ErrorKind::Usage;
}

io::Container small_container(bool with_masks) {
  auto c = io::Container::with_shape(2, 3, 4, 5);
  for (std::size_t i = 0; i < c.payload.size(); ++i) c.payload[i] = float(std::sin(0.37 * double(i)));
  if (with_masks) {
    for (std::uint64_t id : {7ull, 1ull << 40}) {
      io::MaskRecord r{id, Mask(4, 5), Mask(4, 5)};
      for (std::size_t i = 0; i < r.m_i.size(); ++i) {
        r.m_i[i] = (i * 7 + id) % 3 == 0;
        r.m_o[i] = !r.m_i[i] && i % 2 == 0;
      }
      c.masks.push_back(r);
    }
  }
  return c;
}

bool same(const io::Container& a, const io::Container& b) {
  if (a.n_traj != b.n_traj || a.n_frames != b.n_frames || a.rows != b.rows || a.cols != b.cols) return false;
  if (a.payload != b.payload || a.masks.size() != b.masks.size()) return false;
  for (std::size_t k = 0; k < a.masks.size(); ++k) {
    if (a.masks[k].instance_id != b.masks[k].instance_id || !(a.masks[k].m_i == b.masks[k].m_i) ||
        !(a.masks[k].m_o == b.masks[k].m_o))
      return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("io") {

TEST_CASE("crc64 matches the CRC-64/XZ check value") {
  CHECK(io::crc64(std::string_view("123456789")) == 0x995DC9BBDF1939FAull);
}

TEST_CASE("payload length follows the header") {
  CHECK(io::payload_bytes(2, 50, 64, 64) == 1638400u);
  const auto bytes = io::encode_container(io::Container::with_shape(2, 50, 64, 64));
  CHECK(bytes.size() == io::kContainerHeaderBytes + 1638400u);
}

TEST_CASE("container round trip with and without masks") {
  for (bool m : {false, true}) {
    const auto c = small_container(m);
    CHECK(same(io::decode_container(io::encode_container(c)), c));
  }
}

TEST_CASE("frame accessors preserve float values") {
  auto c = io::Container::with_shape(1, 2, 2, 2);
  Field f(2, 2);
  f[0] = 1.5;
  f[3] = -0.25;
  c.set_frame(0, 1, f);
  CHECK(c.frame(0, 1) == f);
  CHECK(kind_of([&] { c.frame(1, 0); }) == ErrorKind::Validation);
  CHECK(kind_of([&] { c.set_frame(0, 0, Field(3, 2)); }) == ErrorKind::Shape);
}

TEST_CASE("container decode rejects damaged input") {
  const auto good = io::encode_container(small_container(true));
  SUBCASE("every payload byte is covered by the checksum") {
    for (std::size_t at : {std::size_t(32), std::size_t(100), good.size() - 1}) {
      auto bad = good;
      bad[at] = char(bad[at] ^ 0x10);
      CHECK(kind_of([&] { io::decode_container(bad); }) == ErrorKind::Checksum);
    }
  }
  SUBCASE("truncation") {
    for (std::size_t n : {std::size_t(2), std::size_t(20), std::size_t(40), good.size() - 3}) {
      CHECK(kind_of([&] { io::decode_container(good.substr(0, n)); }) == ErrorKind::Truncated);
    }
  }
  SUBCASE("version") {
    auto bad = good;
    bad[4] = 2;
    CHECK(kind_of([&] { io::decode_container(bad); }) == ErrorKind::Version);
  }
  SUBCASE("magic and trailing bytes") {
    auto bad = good;
    bad[0] = 'X';
    CHECK(kind_of([&] { io::decode_container(bad); }) == ErrorKind::Data);
    CHECK(kind_of([&] { io::decode_container(good + "x"); }) == ErrorKind::Data);
  }
}

TEST_CASE("checkpoint round trip and damage") {
  io::Checkpoint c;
  c.meta = R"({"step":3})";
  for (int i = 0; i < 17; ++i) {
    c.params.push_back(float(i) * 0.5f);
    c.adam_m.push_back(float(-i));
    c.adam_v.push_back(float(i * i));
  }
  const auto bytes = io::encode_checkpoint(c);
  const auto d = io::decode_checkpoint(bytes);
  CHECK(d.meta == c.meta);
  CHECK(d.params == c.params);
  CHECK(d.adam_m == c.adam_m);
  CHECK(d.adam_v == c.adam_v);
  auto bad = bytes;
  bad[bytes.size() / 2] ^= 1;
  CHECK(kind_of([&] { io::decode_checkpoint(bad); }) == ErrorKind::Checksum);
  CHECK(kind_of([&] { io::decode_checkpoint(bytes.substr(0, bytes.size() - 1)); }) == ErrorKind::Truncated);
  c.adam_v.pop_back();
  CHECK(kind_of([&] { io::encode_checkpoint(c); }) == ErrorKind::Shape);
}

TEST_CASE("png round trip is exact to one gray level") {
  Field f(5, 7);
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = std::cos(0.9 * double(i)) * 3.0;
  const auto r = image::value_range(f);
  const auto png = image::encode_png16(f, r);
  CHECK(png.substr(1, 3) == "PNG");
  const Field g = image::decode_png16(png, r);
  REQUIRE(g.rows == 5);
  REQUIRE(g.cols == 7);
  for (std::size_t i = 0; i < f.size(); ++i) CHECK(std::abs(g[i] - f[i]) <= 0.5 * (r.hi - r.lo) / 65535.0 + 1e-12);
  CHECK(kind_of([&] { image::decode_png16(png.substr(0, png.size() / 2), r); }) == ErrorKind::Data);
}

TEST_CASE("value range and bar chart") {
  const auto r = image::value_range(Field(2, 2, 3.0));
  CHECK(r.lo == 2.5);
  CHECK(r.hi == 3.5);
  const Field bars = image::bar_chart({1.0, 0.5}, 11, 4);
  CHECK(bars.cols == 8);
  CHECK(bars(0, 1) == 1.0);   // tallest bar reaches the top row
  CHECK(bars(0, 5) == 0.0);
  CHECK(bars(10, 5) == 1.0);
  CHECK(bars(10, 0) == 0.0);  // gutter
}

TEST_CASE("every config key is tagged with a rationale") {
  const auto table = config::key_table();
  std::set<std::string> seen;
  for (const auto& k : table) {
    CHECK((k.tag == "paper" || k.tag == "chosen"));
    CHECK(!k.why.empty());
    CHECK(seen.insert(k.section + "." + k.key).second);
  }
  CHECK(seen.count("diffusion.clamp_x0") == 1);
  CHECK(seen.count("eval.rbf_length") == 1);
  const auto doc = config::to_json(config::preset_toy(), true);
  CHECK(doc.at("optimizer").at("lr").at("tag") == "paper");
  CHECK(doc.at("optimizer").at("fill").at("tag") == "chosen");
}

TEST_CASE("config json round trip in both forms") {
  auto cfg = config::preset_toy();
  cfg.seed = 42;
  cfg.eval.K = 7;
  cfg.net.dim_mults = {1, 2};
  for (bool ann : {false, true}) {
    const auto back = config::from_json(config::to_json(cfg, ann));
    CHECK(config::to_json(back) == config::to_json(cfg));
  }
}

TEST_CASE("config rejects unknown keys and bad values") {
  auto doc = config::to_json(config::preset_toy());
  doc["optimizer"]["learning_rate"] = 1.0;
  CHECK(kind_of([&] { config::from_json(doc); }) == ErrorKind::Usage);
  doc = config::to_json(config::preset_toy());
  doc["optimiser"] = nlohmann::json::object();
  CHECK(kind_of([&] { config::from_json(doc); }) == ErrorKind::Usage);
  auto cfg = config::preset_toy();
  CHECK(kind_of([&] { config::set_value(cfg, "eval.bogus", "1"); }) == ErrorKind::Usage);
  CHECK(kind_of([&] { config::preset("large"); }) == ErrorKind::Usage);
}

TEST_CASE("overrides apply typed values") {
  auto cfg = config::preset_toy();
  config::set_value(cfg, "eval.K", "12");
  config::set_value(cfg, "scenario.pattern", "block");
  config::set_value(cfg, "diffusion.clamp_x0", "false");
  CHECK(cfg.eval.K == 12);
  CHECK(cfg.scenario.pattern == "block");
  CHECK_FALSE(cfg.diffusion.clamp_x0);
}

TEST_CASE("presets") {
  const auto p = config::preset_paper_ns();
  CHECK(p.sim.grid_n == 64);
  CHECK(p.optimizer.lr == doctest::Approx(2e-4));
  CHECK(p.optimizer.batch == 64);
  CHECK(p.eval.K == 100);
  const auto t = config::preset_toy();
  CHECK(t.sim.grid_n == 16);
  CHECK_NOTHROW(t.validate());
  CHECK_NOTHROW(p.validate());
}

}  // TEST_SUITE
