#include "solid/solid.h"

#include <cstdlib>
#include <cstring>
#include <new>
#include <string>

#include "config.hpp"
#include "container.hpp"
#include "pipeline.hpp"

using namespace solid;

struct solid_config {
  config::RunConfig cfg;
};
struct solid_container {
  io::Container c;
};
struct solid_model {
  pipeline::Model m;
};
struct solid_calibration {
  pipeline::CalibrationOutput out;
  std::string summary;
  std::vector<std::string> colorbars;
};

namespace {

thread_local std::string g_last_error;

solid_status status_of(ErrorKind k) {
  switch (k) {
    case ErrorKind::Usage: return SOLID_E_USAGE;
    case ErrorKind::Shape: return SOLID_E_SHAPE;
    case ErrorKind::Validation: return SOLID_E_VALIDATION;
    case ErrorKind::Data: return SOLID_E_DATA;
    case ErrorKind::Checksum: return SOLID_E_CHECKSUM;
    case ErrorKind::Truncated: return SOLID_E_TRUNCATED;
    case ErrorKind::Version: return SOLID_E_VERSION;
    case ErrorKind::Numerical: return SOLID_E_NUMERICAL;
  }
  return SOLID_E_INTERNAL;
}

// Runs f, mapping every exception to a status and a thread-local message.
template <class F>
solid_status guard(F&& f) {
  try {
    f();
    return SOLID_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const nlohmann::json::exception& e) {
    g_last_error = std::string("json: ") + e.what();
    return SOLID_E_USAGE;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return SOLID_E_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return SOLID_E_INTERNAL;
  } catch (...) {
    g_last_error = "unknown exception";
    return SOLID_E_INTERNAL;
  }
}

void need(const void* p, const char* what) {
  if (p == nullptr) fail(ErrorKind::Usage, std::string(what) + " is NULL");
}

char* dup(const std::string& s) {
  auto* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (p == nullptr) throw std::bad_alloc();
  std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

void give(const std::string& bytes, uint8_t** out, size_t* len) {
  auto* p = static_cast<uint8_t*>(std::malloc(bytes.empty() ? 1 : bytes.size()));
  if (p == nullptr) throw std::bad_alloc();
  std::memcpy(p, bytes.data(), bytes.size());
  *out = p;
  *len = bytes.size();
}

std::string_view view(const uint8_t* bytes, size_t len) {
  if (len > 0) need(bytes, "bytes");
  return {reinterpret_cast<const char*>(bytes), len};
}

void give_report(const pipeline::Report& r, char** csv, char** summary) {
  need(csv, "csv");
  need(summary, "summary");
  char* a = dup(r.csv);
  try {
    *summary = dup(r.summary.dump(2));
  } catch (...) {
    std::free(a);
    throw;
  }
  *csv = a;
}

}  // namespace

extern "C" {

const char* solid_version(void) { return "1.0.0"; }
const char* solid_last_error(void) { return g_last_error.c_str(); }

const char* solid_status_name(solid_status s) {
  switch (s) {
    case SOLID_OK: return "ok";
    case SOLID_E_USAGE: return "usage";
    case SOLID_E_SHAPE: return "shape";
    case SOLID_E_VALIDATION: return "validation";
    case SOLID_E_DATA: return "data";
    case SOLID_E_CHECKSUM: return "checksum";
    case SOLID_E_TRUNCATED: return "truncated";
    case SOLID_E_VERSION: return "version";
    case SOLID_E_NUMERICAL: return "numerical";
    case SOLID_E_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* solid_deviations(void) {
  static const std::string text = pipeline::deviations().dump();
  return text.c_str();
}

void solid_free_string(char* s) { std::free(s); }
void solid_free_buffer(uint8_t* b) { std::free(b); }

uint64_t solid_crc64(const uint8_t* bytes, size_t len) {
  return len == 0 ? io::crc64(std::string_view()) : io::crc64(std::string_view(reinterpret_cast<const char*>(bytes), len));
}

solid_status solid_config_preset(const char* name, solid_config** out) {
  return guard([&] {
    need(name, "name");
    need(out, "out");
    *out = new solid_config{config::preset(name)};
  });
}

solid_status solid_config_from_json(const char* text, solid_config** out) {
  return guard([&] {
    need(text, "json");
    need(out, "out");
    const auto doc = nlohmann::json::parse(text);
    auto cfg = config::from_json(doc);
    *out = new solid_config{std::move(cfg)};
  });
}

solid_status solid_config_to_json(const solid_config* cfg, int annotated, char** out) {
  return guard([&] {
    need(cfg, "cfg");
    need(out, "out");
    *out = dup(config::to_json(cfg->cfg, annotated != 0).dump(2));
  });
}

solid_status solid_config_set(solid_config* cfg, const char* key, const char* value) {
  return guard([&] {
    need(cfg, "cfg");
    need(key, "key");
    need(value, "value");
    auto next = cfg->cfg;
    config::set_value(next, key, value);
    cfg->cfg = std::move(next);
  });
}

solid_status solid_config_set_seed(solid_config* cfg, uint64_t seed) {
  return guard([&] {
    need(cfg, "cfg");
    cfg->cfg.seed = seed;
  });
}

solid_status solid_config_validate(const solid_config* cfg) {
  return guard([&] {
    need(cfg, "cfg");
    cfg->cfg.validate();
  });
}

void solid_config_free(solid_config* cfg) { delete cfg; }

solid_status solid_container_decode(const uint8_t* bytes, size_t len, solid_container** out) {
  return guard([&] {
    need(out, "out");
    *out = new solid_container{io::decode_container(view(bytes, len))};
  });
}

solid_status solid_container_encode(const solid_container* c, uint8_t** out, size_t* len) {
  return guard([&] {
    need(c, "container");
    need(out, "out");
    need(len, "len");
    give(io::encode_container(c->c), out, len);
  });
}

solid_status solid_container_info_get(const solid_container* c, solid_container_info* out) {
  return guard([&] {
    need(c, "container");
    need(out, "out");
    *out = {c->c.n_traj, c->c.n_frames, c->c.rows, c->c.cols, uint32_t(c->c.masks.size())};
  });
}

solid_status solid_container_frame(const solid_container* c, uint32_t traj, uint32_t frame, float* out) {
  return guard([&] {
    need(c, "container");
    need(out, "out");
    const Field f = c->c.frame(traj, frame);
    for (std::size_t i = 0; i < f.size(); ++i) out[i] = float(f[i]);
  });
}

void solid_container_free(solid_container* c) { delete c; }

solid_status solid_simulate(const solid_config* cfg, solid_container** out) {
  return guard([&] {
    need(cfg, "cfg");
    need(out, "out");
    cfg->cfg.validate();
    *out = new solid_container{pipeline::simulate(cfg->cfg)};
  });
}

solid_status solid_make_masks(const solid_config* cfg, solid_container** out) {
  return guard([&] {
    need(cfg, "cfg");
    need(out, "out");
    cfg->cfg.validate();
    *out = new solid_container{pipeline::make_masks(cfg->cfg)};
  });
}

solid_status solid_model_init(const solid_config* cfg, const solid_container* data, const solid_container* masks,
                              solid_model** out) {
  return guard([&] {
    need(cfg, "cfg");
    need(data, "data");
    need(masks, "masks");
    need(out, "out");
    cfg->cfg.validate();
    *out = new solid_model{pipeline::init_model(cfg->cfg, data->c, pipeline::MaskIndex(masks->c))};
  });
}

solid_status solid_model_decode(const uint8_t* bytes, size_t len, solid_model** out) {
  return guard([&] {
    need(out, "out");
    *out = new solid_model{pipeline::from_checkpoint(io::decode_checkpoint(view(bytes, len)))};
  });
}

solid_status solid_model_encode(const solid_model* m, uint8_t** out, size_t* len) {
  return guard([&] {
    need(m, "model");
    need(out, "out");
    need(len, "len");
    give(io::encode_checkpoint(pipeline::to_checkpoint(m->m)), out, len);
  });
}

solid_status solid_model_step(const solid_model* m, int64_t* out) {
  return guard([&] {
    need(m, "model");
    need(out, "out");
    *out = m->m.adam.step;
  });
}

solid_status solid_model_param_count(const solid_model* m, uint64_t* out) {
  return guard([&] {
    need(m, "model");
    need(out, "out");
    *out = m->m.net.param_count();
  });
}

solid_status solid_model_norm(const solid_model* m, double* mu, double* sigma) {
  return guard([&] {
    need(m, "model");
    need(mu, "mu");
    need(sigma, "sigma");
    *mu = m->m.norm.mu;
    *sigma = m->m.norm.sigma;
  });
}

solid_status solid_model_config(const solid_model* m, solid_config** out) {
  return guard([&] {
    need(m, "model");
    need(out, "out");
    *out = new solid_config{m->m.cfg};
  });
}

solid_status solid_model_adopt_config(solid_model* m, const solid_config* cfg) {
  return guard([&] {
    need(m, "model");
    need(cfg, "cfg");
    pipeline::adopt_config(m->m, cfg->cfg);
  });
}

void solid_model_free(solid_model* m) { delete m; }

solid_status solid_train(solid_model* m, const solid_container* data, const solid_container* masks, int64_t until,
                         solid_progress_fn progress, void* user) {
  return guard([&] {
    need(m, "model");
    need(data, "data");
    need(masks, "masks");
    pipeline::Progress cb;
    if (progress) cb = [&](const train::StepMetrics& s) { progress(user, s.step, s.loss, s.lr, s.grad_norm); };
    pipeline::train_until(m->m, data->c, pipeline::MaskIndex(masks->c), until, cb);
  });
}

solid_status solid_sample(const solid_model* m, const solid_container* data, const solid_container* masks,
                          solid_container** out) {
  return guard([&] {
    need(m, "model");
    need(data, "data");
    need(masks, "masks");
    need(out, "out");
    *out = new solid_container{pipeline::sample(m->m, data->c, masks->c)};
  });
}

solid_status solid_rollout(const solid_model* m, const solid_container* data, const solid_container* masks,
                           solid_container** out) {
  return guard([&] {
    need(m, "model");
    need(data, "data");
    need(masks, "masks");
    need(out, "out");
    *out = new solid_container{pipeline::rollout(m->m, data->c, masks->c)};
  });
}

solid_status solid_evaluate(const solid_config* cfg, const solid_container* data, const solid_container* ensembles,
                            char** csv, char** summary) {
  return guard([&] {
    need(cfg, "cfg");
    need(data, "data");
    need(ensembles, "ensembles");
    give_report(pipeline::evaluate(cfg->cfg, data->c, ensembles->c), csv, summary);
  });
}

solid_status solid_rollout_report(const solid_config* cfg, const solid_container* data,
                                  const solid_container* rollouts, char** csv, char** summary) {
  return guard([&] {
    need(cfg, "cfg");
    need(data, "data");
    need(rollouts, "rollouts");
    give_report(pipeline::rollout_report(cfg->cfg, data->c, rollouts->c), csv, summary);
  });
}

solid_status solid_baseline(const solid_config* cfg, const solid_container* data, const solid_container* masks,
                            const solid_model* model, int untrained, char** csv, char** summary) {
  return guard([&] {
    need(cfg, "cfg");
    need(data, "data");
    need(masks, "masks");
    const pipeline::MaskIndex index(masks->c);
    const auto norm = model ? model->m.norm : pipeline::training_norm(cfg->cfg, data->c, index);
    std::optional<pipeline::Model> fresh;
    if (untrained) fresh.emplace(pipeline::init_model(cfg->cfg, data->c, index));
    give_report(pipeline::baseline(cfg->cfg, data->c, masks->c, norm, fresh ? &*fresh : nullptr), csv, summary);
  });
}

solid_status solid_calibrate(const solid_config* cfg, const solid_container* data, const solid_container* ensembles,
                             int n_maps, solid_calibration** out) {
  return guard([&] {
    need(cfg, "cfg");
    need(data, "data");
    need(ensembles, "ensembles");
    need(out, "out");
    auto* c = new solid_calibration{pipeline::calibrate(cfg->cfg, data->c, ensembles->c, n_maps), {}, {}};
    c->summary = c->out.report.summary.dump(2);
    for (const auto& f : c->out.figures) c->colorbars.push_back(f.colorbar.dump(2));
    *out = c;
  });
}

solid_status solid_calibration_report(const solid_calibration* c, const char** csv, const char** summary) {
  return guard([&] {
    need(c, "calibration");
    need(csv, "csv");
    need(summary, "summary");
    *csv = c->out.report.csv.c_str();
    *summary = c->summary.c_str();
  });
}

size_t solid_calibration_figure_count(const solid_calibration* c) { return c ? c->out.figures.size() : 0; }

solid_status solid_calibration_figure(const solid_calibration* c, size_t i, const char** name, const uint8_t** png,
                                      size_t* png_len, const char** colorbar) {
  return guard([&] {
    need(c, "calibration");
    if (i >= c->out.figures.size()) fail(ErrorKind::Usage, "figure index out of range");
    const auto& f = c->out.figures[i];
    if (name) *name = f.name.c_str();
    if (png) *png = reinterpret_cast<const uint8_t*>(f.png.data());
    if (png_len) *png_len = f.png.size();
    if (colorbar) *colorbar = c->colorbars[i].c_str();
  });
}

void solid_calibration_free(solid_calibration* c) { delete c; }

}  // extern "C"
