// Command-line front end. Every file the toolkit produces is written here,
// through the C interface, as temp file + rename. Each output X gets a
// provenance sidecar X.json; passing that sidecar back as --config reruns the
// command on the recorded inputs and reproduces X byte for byte.

#include <solid/solid.h>

#if defined(__GLIBC__)
#include <malloc.h>
#endif
#include <unistd.h>

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---- errors and exit codes --------------------------------------------------

struct Failure {
  solid_status status;
  std::string message;
};

[[noreturn]] void raise(solid_status s, std::string msg) { throw Failure{s, std::move(msg)}; }

void check(solid_status s, const char* what) {
  if (s != SOLID_OK) raise(s, std::string(what) + ": " + solid_last_error());
}

int exit_code(solid_status s) {
  switch (s) {
    case SOLID_OK: return 0;
    case SOLID_E_USAGE: return 1;
    case SOLID_E_NUMERICAL: return 3;
    default: return 2;
  }
}

// ---- RAII over C handles ----------------------------------------------------

template <class T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};
using Config = std::unique_ptr<solid_config, Deleter<solid_config, solid_config_free>>;
using Container = std::unique_ptr<solid_container, Deleter<solid_container, solid_container_free>>;
using ModelPtr = std::unique_ptr<solid_model, Deleter<solid_model, solid_model_free>>;
using Calibration = std::unique_ptr<solid_calibration, Deleter<solid_calibration, solid_calibration_free>>;

std::string take_string(char* s) {
  std::string out(s);
  solid_free_string(s);
  return out;
}

std::string take_buffer(uint8_t* b, size_t n) {
  std::string out(reinterpret_cast<const char*>(b), n);
  solid_free_buffer(b);
  return out;
}

// ---- files ------------------------------------------------------------------

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) raise(SOLID_E_DATA, "cannot open " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_atomic(const fs::path& p, const std::string& bytes) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  fs::path tmp = p;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) raise(SOLID_E_DATA, "cannot write " + tmp.string());
    out.write(bytes.data(), std::streamsize(bytes.size()));
    out.flush();
    if (!out) raise(SOLID_E_DATA, "short write to " + tmp.string());
  }
  fs::rename(tmp, p);
}

std::string crc_hex(const std::string& bytes) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(solid_crc64(reinterpret_cast<const uint8_t*>(bytes.data()), bytes.size())));
  return buf;
}

json parse_json(const std::string& text, const std::string& where) {
  json doc = json::parse(text, nullptr, false);
  if (doc.is_discarded()) raise(SOLID_E_USAGE, where + ": not valid JSON");
  return doc;
}

// ---- config -----------------------------------------------------------------

Config config_from(const json& doc) {
  solid_config* c = nullptr;
  check(solid_config_from_json(doc.dump().c_str(), &c), "config");
  return Config(c);
}

json config_json(const solid_config* c, bool annotated) {
  char* s = nullptr;
  check(solid_config_to_json(c, annotated ? 1 : 0, &s), "config");
  return json::parse(take_string(s));
}

/// Plain-form copy of a sidecar's config, for section comparisons.
json plain(const json& doc) { return config_json(config_from(doc).get(), false); }

// ---- inputs and provenance --------------------------------------------------

struct Input {
  std::string role;
  fs::path path;
  std::string bytes;
  json sidecar;
};

fs::path sidecar_path(const fs::path& p) {
  fs::path s = p;
  s += ".json";
  return s;
}

Input load_input(const std::string& role, const fs::path& path, const std::optional<std::string>& expect_crc) {
  Input in{role, path, read_file(path), {}};
  const std::string crc = crc_hex(in.bytes);
  if (expect_crc && *expect_crc != crc) {
    raise(SOLID_E_DATA, role + " " + path.string() + " has checksum " + crc + ", the sidecar recorded " + *expect_crc);
  }
  const fs::path sp = sidecar_path(path);
  if (!fs::exists(sp)) raise(SOLID_E_DATA, role + " " + path.string() + " has no provenance sidecar " + sp.string());
  in.sidecar = parse_json(read_file(sp), sp.string());
  if (!in.sidecar.contains("artifact") || in.sidecar["artifact"].value("output", json::object()).value("crc64", "") != crc) {
    raise(SOLID_E_DATA, "sidecar " + sp.string() + " does not describe " + path.string() + " (stale or foreign)");
  }
  return in;
}

void require_same(const json& want, const Input& in, std::initializer_list<const char*> keys) {
  const json have = plain(in.sidecar.at("config"));
  for (const char* k : keys) {
    if (want.value(k, json()) != have.value(k, json())) {
      raise(SOLID_E_DATA, in.role + " " + in.path.string() + " was produced under a different '" + k +
                              "' setting; pass matching --config/--preset/--seed or regenerate it");
    }
  }
}

Container decode_container(const Input& in) {
  solid_container* c = nullptr;
  check(solid_container_decode(reinterpret_cast<const uint8_t*>(in.bytes.data()), in.bytes.size(), &c),
        (in.role + " " + in.path.string()).c_str());
  return Container(c);
}

ModelPtr decode_model(const Input& in) {
  solid_model* m = nullptr;
  check(solid_model_decode(reinterpret_cast<const uint8_t*>(in.bytes.data()), in.bytes.size(), &m),
        (in.role + " " + in.path.string()).c_str());
  return ModelPtr(m);
}

// ---- one command invocation -------------------------------------------------

std::string default_input_name(const std::string& role) {
  if (role == "data") return "dataset.sfd";
  if (role == "masks") return "masks.sfd";
  if (role == "model") return "model.sck";
  return "ensembles.sfd";
}

struct Options {
  std::string command;
  std::string config_path;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::vector<std::string> sets;
  std::map<std::string, std::string> inputs;  // role -> path given on the command line
  // command-specific
  std::optional<std::int64_t> until;
  std::optional<int> maps;
  bool untrained = false;
};

class Run {
 public:
  explicit Run(Options o) : opt_(std::move(o)), out_dir_(opt_.out) {}

  void execute();
  const std::vector<std::string>& outputs() const { return written_; }

 private:
  // Resolution order: sidecar or config file, else --preset, else the primary
  // input's recorded config, else the paper-ns preset; then --seed and --set.
  // A sibling role lends only its sidecar config and is not recorded as an input.
  void resolve_config(const char* primary_role, const char* sibling_role = nullptr);
  fs::path sibling_sidecar(const std::string& role) const;
  Input input(const std::string& role, const std::string& default_name);
  void emit(const std::string& name, const std::string& bytes, const json& extra = json::object());
  json artifact(const std::string& name, const std::string& bytes, const json& extra) const;

  void simulate();
  void masks();
  void train();
  void sample(bool rollout);
  void evaluate();
  void calibrate();
  void baseline();

  Options opt_;
  fs::path out_dir_;
  json rerun_;  // artifact block when --config names a sidecar
  Config cfg_;
  json cfg_plain_;
  std::vector<Input> inputs_;
  json args_ = json::object();
  std::vector<std::string> written_;
};

fs::path Run::sibling_sidecar(const std::string& role) const {
  const auto it = opt_.inputs.find(role);
  return sidecar_path(it != opt_.inputs.end() ? fs::path(it->second) : out_dir_ / default_input_name(role));
}

void Run::resolve_config(const char* primary_role, const char* sibling_role) {
  json base;
  if (!opt_.config_path.empty()) {
    if (!opt_.preset.empty()) raise(SOLID_E_USAGE, "--config and --preset are mutually exclusive");
    json doc = parse_json(read_file(opt_.config_path), opt_.config_path);
    if (doc.contains("artifact")) {
      rerun_ = doc["artifact"];
      if (rerun_.value("command", "") != opt_.command) {
        raise(SOLID_E_USAGE, "sidecar " + opt_.config_path + " records command '" + rerun_.value("command", "") +
                                 "', not '" + opt_.command + "'");
      }
      doc = doc.at("config");
    }
    base = doc;
  } else if (!opt_.preset.empty()) {
    base = {{"preset", opt_.preset}};
  } else if (primary_role != nullptr && (opt_.inputs.count(primary_role) || fs::exists(out_dir_ / default_input_name(primary_role)))) {
    base = input(primary_role, default_input_name(primary_role)).sidecar.at("config");
  } else if (sibling_role != nullptr && fs::exists(sibling_sidecar(sibling_role))) {
    const fs::path side = sibling_sidecar(sibling_role);
    base = parse_json(read_file(side.string()), side.string()).at("config");
  } else {
    base = {{"preset", "paper-ns"}};
  }
  cfg_ = config_from(base);
  if (opt_.seed) check(solid_config_set_seed(cfg_.get(), *opt_.seed), "--seed");
  for (const auto& s : opt_.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) raise(SOLID_E_USAGE, "--set expects KEY=VALUE, got '" + s + "'");
    check(solid_config_set(cfg_.get(), s.substr(0, eq).c_str(), s.substr(eq + 1).c_str()), "--set");
  }
  check(solid_config_validate(cfg_.get()), "config");
  cfg_plain_ = config_json(cfg_.get(), false);
  if (rerun_.is_object()) {
    const json args = rerun_.value("args", json::object());
    if (!opt_.until && args.contains("until")) opt_.until = args["until"].get<std::int64_t>();
    if (!opt_.maps && args.contains("maps")) opt_.maps = args["maps"].get<int>();
    if (args.contains("untrained")) opt_.untrained = opt_.untrained || args["untrained"].get<bool>();
  }
}


Input Run::input(const std::string& role, const std::string& default_name) {
  for (const auto& in : inputs_)
    if (in.role == role) return in;
  std::optional<std::string> crc;
  fs::path path;
  if (auto it = opt_.inputs.find(role); it != opt_.inputs.end()) {
    path = it->second;
  } else if (rerun_.is_object() && rerun_.value("inputs", json::object()).contains(role)) {
    const json& rec = rerun_["inputs"][role];
    path = rec.at("path").get<std::string>();
    crc = rec.at("crc64").get<std::string>();
  } else {
    path = out_dir_ / default_name;
  }
  inputs_.push_back(load_input(role, path, crc));
  return inputs_.back();
}

json Run::artifact(const std::string& name, const std::string& bytes, const json& extra) const {
  json inputs = json::object();
  for (const auto& in : inputs_)
    inputs[in.role] = {{"path", fs::absolute(in.path).lexically_normal().string()}, {"crc64", crc_hex(in.bytes)}};
  json a = {{"command", opt_.command},
            {"tool_version", solid_version()},
            {"seed", cfg_plain_.at("seed")},
            {"args", args_},
            {"inputs", inputs},
            {"output", {{"file", name}, {"bytes", bytes.size()}, {"crc64", crc_hex(bytes)}}},
            {"deviations", json::parse(solid_deviations())}};
  for (auto it = extra.begin(); it != extra.end(); ++it) a[it.key()] = it.value();
  return a;
}

void Run::emit(const std::string& name, const std::string& bytes, const json& extra) {
  const fs::path p = out_dir_ / name;
  write_atomic(p, bytes);
  const json side = {{"artifact", artifact(name, bytes, extra)}, {"config", config_json(cfg_.get(), true)}};
  write_atomic(sidecar_path(p), side.dump(2) + "\n");
  written_.push_back(p.string());
}

std::string encode(const solid_container* c) {
  uint8_t* b = nullptr;
  size_t n = 0;
  check(solid_container_encode(c, &b, &n), "encode");
  return take_buffer(b, n);
}

std::string encode(const solid_model* m) {
  uint8_t* b = nullptr;
  size_t n = 0;
  check(solid_model_encode(m, &b, &n), "encode");
  return take_buffer(b, n);
}

json model_meta(const solid_model* m) {
  double mu = 0, sigma = 0;
  std::int64_t step = 0;
  std::uint64_t params = 0;
  check(solid_model_norm(m, &mu, &sigma), "model");
  check(solid_model_step(m, &step), "model");
  check(solid_model_param_count(m, &params), "model");
  return {{"norm", {{"mu", mu}, {"sigma", sigma}}}, {"step", step}, {"param_count", params}};
}

void Run::simulate() {
  resolve_config(nullptr);
  solid_container* c = nullptr;
  check(solid_simulate(cfg_.get(), &c), "simulate");
  Container data(c);
  emit("dataset.sfd", encode(data.get()));
}

void Run::masks() {
  resolve_config(nullptr, "data");
  solid_container* c = nullptr;
  check(solid_make_masks(cfg_.get(), &c), "masks");
  Container m(c);
  emit("masks.sfd", encode(m.get()));
}

struct TrainLog {
  std::int64_t every = 1;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
};

void log_step(void* user, int64_t step, double loss, double lr, double grad_norm) {
  const auto* log = static_cast<TrainLog*>(user);
  if (step % log->every != 0) return;
  const double t = std::chrono::duration<double>(std::chrono::steady_clock::now() - log->start).count();
  std::cout << json{{"step", step}, {"loss", loss}, {"lr", lr}, {"grad_norm", grad_norm}, {"elapsed_s", t}}.dump()
            << std::endl;
}

void Run::train() {
  resolve_config("data");
  const Input data_in = input("data", "dataset.sfd");
  const Input masks_in = input("masks", "masks.sfd");
  require_same(cfg_plain_, data_in, {"seed", "sim"});
  require_same(cfg_plain_, masks_in, {"seed", "sim", "scenario"});
  Container data = decode_container(data_in), masks = decode_container(masks_in);

  const std::int64_t total = cfg_plain_["optimizer"]["steps"].get<std::int64_t>();
  const std::int64_t until = opt_.until.value_or(total);
  if (until < 0 || until > total) raise(SOLID_E_USAGE, "--until must lie in [0, optimizer.steps]");
  args_["until"] = until;

  ModelPtr model;
  const fs::path ckpt = out_dir_ / "model.sck";
  if (fs::exists(ckpt)) {
    // Resume; the bytes are not an input of record because an uninterrupted
    // run from scratch produces the same checkpoint.
    const std::string bytes = read_file(ckpt);
    solid_model* m = nullptr;
    check(solid_model_decode(reinterpret_cast<const uint8_t*>(bytes.data()), bytes.size(), &m), "resume");
    model.reset(m);
    check(solid_model_adopt_config(model.get(), cfg_.get()), "resume");
  } else {
    solid_model* m = nullptr;
    check(solid_model_init(cfg_.get(), data.get(), masks.get(), &m), "init");
    model.reset(m);
  }
  std::int64_t step = 0;
  check(solid_model_step(model.get(), &step), "model");
  if (step > until) raise(SOLID_E_USAGE, "checkpoint is already at step " + std::to_string(step) + " > --until");

  TrainLog log;
  log.every = std::max<std::int64_t>(1, cfg_plain_["optimizer"]["log_every"].get<std::int64_t>());
  const std::int64_t every = std::max<std::int64_t>(1, cfg_plain_["optimizer"]["checkpoint_every"].get<std::int64_t>());
  do {
    const std::int64_t next = std::min(until, (step / every + 1) * every);
    check(solid_train(model.get(), data.get(), masks.get(), next, log_step, &log), "train");
    step = next;
    const json meta = model_meta(model.get());
    written_.clear();
    emit("model.sck", encode(model.get()), meta);
  } while (step < until);
}

void Run::sample(bool rollout) {
  resolve_config("model");
  const Input model_in = input("model", "model.sck");
  const Input data_in = input("data", "dataset.sfd");
  const Input masks_in = input("masks", "masks.sfd");
  require_same(cfg_plain_, data_in, {"seed", "sim"});
  require_same(cfg_plain_, masks_in, {"seed", "sim", "scenario"});
  ModelPtr model = decode_model(model_in);
  check(solid_model_adopt_config(model.get(), cfg_.get()), "model");
  Container data = decode_container(data_in), masks = decode_container(masks_in);
  solid_container* c = nullptr;
  if (!rollout) {
    check(solid_sample(model.get(), data.get(), masks.get(), &c), "sample");
    Container ens(c);
    emit("ensembles.sfd", encode(ens.get()), model_meta(model.get()));
    return;
  }
  check(solid_rollout(model.get(), data.get(), masks.get(), &c), "rollout");
  Container ens(c);
  emit("rollout.sfd", encode(ens.get()), model_meta(model.get()));
  char *csv = nullptr, *summary = nullptr;
  check(solid_rollout_report(cfg_.get(), data.get(), ens.get(), &csv, &summary), "rollout report");
  emit("rollout.csv", take_string(csv), {{"summary", json::parse(take_string(summary))}});
}

void Run::evaluate() {
  resolve_config("ensembles");
  const Input ens_in = input("ensembles", "ensembles.sfd");
  const Input data_in = input("data", "dataset.sfd");
  require_same(cfg_plain_, ens_in, {"seed", "sim", "scenario"});
  require_same(cfg_plain_, data_in, {"seed", "sim"});
  Container ens = decode_container(ens_in), data = decode_container(data_in);
  char *csv = nullptr, *summary = nullptr;
  check(solid_evaluate(cfg_.get(), data.get(), ens.get(), &csv, &summary), "evaluate");
  const std::string table = take_string(csv);
  emit("evaluate.csv", table, {{"summary", json::parse(take_string(summary))}});
}

void Run::calibrate() {
  resolve_config("ensembles");
  const Input ens_in = input("ensembles", "ensembles.sfd");
  const Input data_in = input("data", "dataset.sfd");
  require_same(cfg_plain_, ens_in, {"seed", "sim", "scenario"});
  require_same(cfg_plain_, data_in, {"seed", "sim"});
  Container ens = decode_container(ens_in), data = decode_container(data_in);
  const int maps = opt_.maps.value_or(4);
  args_["maps"] = maps;
  solid_calibration* c = nullptr;
  check(solid_calibrate(cfg_.get(), data.get(), ens.get(), maps, &c), "calibrate");
  Calibration cal(c);
  json figures = json::array();
  for (size_t i = 0; i < solid_calibration_figure_count(cal.get()); ++i) {
    const char *name = nullptr, *bar = nullptr;
    const uint8_t* png = nullptr;
    size_t len = 0;
    check(solid_calibration_figure(cal.get(), i, &name, &png, &len, &bar), "figure");
    const std::string bytes(reinterpret_cast<const char*>(png), len);
    const fs::path p = out_dir_ / "figures" / (std::string(name) + ".png");
    write_atomic(p, bytes);
    write_atomic(out_dir_ / "figures" / (std::string(name) + ".colorbar.json"), std::string(bar) + "\n");
    written_.push_back(p.string());
    figures.push_back({{"file", fs::path("figures") / (std::string(name) + ".png")}, {"crc64", crc_hex(bytes)}});
  }
  const char *csv = nullptr, *summary = nullptr;
  check(solid_calibration_report(cal.get(), &csv, &summary), "calibrate");
  emit("calibration.csv", csv, {{"summary", json::parse(summary)}, {"figures", figures}});
}

void Run::baseline() {
  resolve_config("masks");
  const Input masks_in = input("masks", "masks.sfd");
  const Input data_in = input("data", "dataset.sfd");
  require_same(cfg_plain_, masks_in, {"seed", "sim", "scenario"});
  require_same(cfg_plain_, data_in, {"seed", "sim"});
  Container masks = decode_container(masks_in), data = decode_container(data_in);
  ModelPtr model;
  if (opt_.inputs.count("model") || (rerun_.is_object() && rerun_.value("inputs", json::object()).contains("model"))) {
    model = decode_model(input("model", "model.sck"));
  }
  args_["untrained"] = opt_.untrained;
  char *csv = nullptr, *summary = nullptr;
  check(solid_baseline(cfg_.get(), data.get(), masks.get(), model.get(), opt_.untrained ? 1 : 0, &csv, &summary),
        "baseline");
  const std::string table = take_string(csv);
  emit("baseline.csv", table, {{"summary", json::parse(take_string(summary))}});
}

void Run::execute() {
  const std::string& c = opt_.command;
  if (c == "simulate") simulate();
  else if (c == "masks") masks();
  else if (c == "train") train();
  else if (c == "sample") sample(false);
  else if (c == "rollout") sample(true);
  else if (c == "evaluate") evaluate();
  else if (c == "calibrate") calibrate();
  else if (c == "baseline") baseline();
  else raise(SOLID_E_USAGE, "unknown command '" + c + "'");
}

void last_record(const json& rec) { std::cerr << rec.dump() << std::endl; }

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Large per-step tape buffers otherwise go through mmap/munmap every step.
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
  Options opt;
  CLI::App app{"Sparse-observation diffusion toolkit: simulate, mask, train, sample and evaluate."};
  app.require_subcommand(1);
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "run config or artifact sidecar (JSON)");
    sub->add_option("--preset", opt.preset, "toy | paper-ns");
    sub->add_option("--seed", opt.seed, "master seed");
    sub->add_option("--out", opt.out, "output directory (also the default input directory)");
    sub->add_option("--set", opt.sets, "config override section.key=value (repeatable)");
  };
  auto in = [&](CLI::App* sub, const std::string& role) {
    sub->add_option_function<std::string>("--" + role, [&opt, role](const std::string& p) { opt.inputs[role] = p; },
                                          role + " artifact path");
  };
  auto shortcut = [&](CLI::App* sub, const std::string& flag, const std::string& key, const std::string& help) {
    sub->add_option_function<std::string>(flag, [&opt, key](const std::string& v) { opt.sets.push_back(key + "=" + v); },
                                          help + " (" + key + ")");
  };

  auto* sim = app.add_subcommand("simulate", "generate vorticity trajectories -> dataset.sfd");
  common(sim);
  shortcut(sim, "--n-traj", "sim.n_traj", "trajectory count");

  auto* msk = app.add_subcommand("masks", "draw conditioning/target mask pairs -> masks.sfd");
  common(msk);
  in(msk, "data");
  shortcut(msk, "--pattern", "scenario.pattern", "random | block");
  shortcut(msk, "--density", "scenario.density", "observed fraction for random masks");
  shortcut(msk, "--n-blocks", "scenario.n_blocks", "block count for block masks");
  shortcut(msk, "--regime", "scenario.regime", "global | instance");
  shortcut(msk, "--overlap", "scenario.overlap_fraction", "share of M_i also supervised");

  auto* trn = app.add_subcommand("train", "train or resume -> model.sck");
  common(trn);
  in(trn, "data");
  in(trn, "masks");
  trn->add_option("--until", opt.until, "stop at this step (defaults to optimizer.steps)");

  auto* smp = app.add_subcommand("sample", "K conditional samples per test instance -> ensembles.sfd");
  auto* rol = app.add_subcommand("rollout", "autoregressive rollout of forecast instances -> rollout.sfd");
  for (auto* sub : {smp, rol}) {
    common(sub);
    in(sub, "model");
    in(sub, "data");
    in(sub, "masks");
    shortcut(sub, "--K", "eval.K", "ensemble size");
    shortcut(sub, "--ddim-steps", "diffusion.ddim_steps", "sampler steps");
  }
  shortcut(rol, "--horizon", "eval.horizon", "rollout depth");

  auto* evl = app.add_subcommand("evaluate", "CRPS report -> evaluate.csv");
  auto* cal = app.add_subcommand("calibrate", "uncertainty calibration and figures -> calibration.csv, figures/");
  for (auto* sub : {evl, cal}) {
    common(sub);
    in(sub, "data");
    in(sub, "ensembles");
  }
  cal->add_option("--maps", opt.maps, "instances with sigma and error maps");

  auto* bas = app.add_subcommand("baseline", "deterministic baselines scored as K = 1 -> baseline.csv");
  common(bas);
  in(bas, "data");
  in(bas, "masks");
  in(bas, "model");
  bas->add_flag("--untrained", opt.untrained, "also sample a freshly initialized model");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    if (rc == 0) return 0;  // --help
    last_record({{"status", "error"}, {"exit", 1}, {"kind", "usage"}, {"message", e.what()}});
    return 1;
  }
  opt.command = app.get_subcommands().front()->get_name();

  try {
    Run run(opt);
    run.execute();
    last_record({{"status", "ok"}, {"exit", 0}, {"command", opt.command}, {"outputs", run.outputs()}});
    return 0;
  } catch (const Failure& f) {
    const int rc = exit_code(f.status);
    last_record({{"status", "error"}, {"exit", rc}, {"command", opt.command}, {"kind", solid_status_name(f.status)},
                 {"message", f.message}});
    return rc;
  } catch (const std::exception& e) {
    last_record({{"status", "error"}, {"exit", 2}, {"command", opt.command}, {"kind", "internal"}, {"message", e.what()}});
    return 2;
  }
}
