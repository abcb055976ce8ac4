#include "gloie/diffcore.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "gloie/errors.hpp"

namespace gloie {

ParamTensor::ParamTensor(std::string name_, std::size_t rows_, std::size_t cols_)
    : name(std::move(name_)), rows(rows_), cols(cols_) {
  values.assign(rows * cols, 0.0);
  grad.assign(rows * cols, 0.0);
  m.assign(rows * cols, 0.0);
  v.assign(rows * cols, 0.0);
}

void ParamTensor::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

void affine_forward(const ParamTensor& W, const ParamTensor& b, const double* x,
                    double* y) {
  if (b.size() != W.rows) throw std::invalid_argument("affine: bias/W mismatch");
  for (std::size_t r = 0; r < W.rows; ++r) {
    const double* wr = W.values.data() + r * W.cols;
    double acc = b.values[r];
    for (std::size_t c = 0; c < W.cols; ++c) acc += wr[c] * x[c];
    y[r] = acc;
  }
}

void affine_backward(ParamTensor& W, ParamTensor& b, const double* x,
                     const double* g, double* dx) {
  if (b.size() != W.rows) throw std::invalid_argument("affine: bias/W mismatch");
  if (dx)
    for (std::size_t c = 0; c < W.cols; ++c) dx[c] = 0.0;
  for (std::size_t r = 0; r < W.rows; ++r) {
    const double gr = g[r];
    double* dwr = W.grad.data() + r * W.cols;
    const double* wr = W.values.data() + r * W.cols;
    b.grad[r] += gr;
    for (std::size_t c = 0; c < W.cols; ++c) {
      dwr[c] += gr * x[c];
      if (dx) dx[c] += wr[c] * gr;
    }
  }
}

void init_uniform_fan(ParamTensor& W, Rng& rng) {
  const double s = std::sqrt(6.0 / static_cast<double>(W.rows + W.cols));
  std::uniform_real_distribution<double> dist(-s, s);
  for (auto& w : W.values) w = dist(rng);
}

void adam_step(const std::vector<ParamTensor*>& params,
               const OptimizerConfig& cfg) {
  if (!(cfg.lr > 0) || !(cfg.beta1 > 0 && cfg.beta1 < 1) ||
      !(cfg.beta2 > 0 && cfg.beta2 < 1))
    throw config_error("invalid optimizer config");
  for (ParamTensor* p : params) {
    for (double g : p->grad)
      if (!std::isfinite(g))
        throw divergence_error("non-finite gradient in tensor '" + p->name + "'");
    p->step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p->step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p->step));
    for (std::size_t i = 0; i < p->values.size(); ++i) {
      const double g = p->grad[i];
      p->m[i] = cfg.beta1 * p->m[i] + (1.0 - cfg.beta1) * g;
      p->v[i] = cfg.beta2 * p->v[i] + (1.0 - cfg.beta2) * g * g;
      const double mhat = p->m[i] / bc1;
      const double vhat = p->v[i] / bc2;
      p->values[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
    p->zero_grad();
  }
}

GradCheckReport gradient_check(const std::function<double(bool)>& loss_fn,
                               const std::vector<ParamTensor*>& params,
                               double h, std::size_t max_coords,
                               std::uint64_t seed) {
  for (ParamTensor* p : params) p->zero_grad();
  const double base = loss_fn(true);
  if (!std::isfinite(base)) throw divergence_error("non-finite loss in gradient_check");

  struct Coord {
    ParamTensor* t;
    std::size_t i;
  };
  std::vector<Coord> coords;
  for (ParamTensor* p : params)
    for (std::size_t i = 0; i < p->size(); ++i) coords.push_back({p, i});
  if (coords.size() > max_coords) {
    Rng rng(seed);
    deterministic_shuffle(coords, rng);
    coords.resize(max_coords);
  }

  GradCheckReport report;
  report.coords_checked = coords.size();
  for (const auto& [t, i] : coords) {
    const double keep = t->values[i];
    t->values[i] = keep + h;
    const double up = loss_fn(false);
    t->values[i] = keep - h;
    const double down = loss_fn(false);
    t->values[i] = keep;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw divergence_error("non-finite loss in gradient_check");
    const double numeric = (up - down) / (2.0 * h);
    const double analytic = t->grad[i];
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    const double rel = std::abs(analytic - numeric) / denom;
    if (rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_tensor = t->name;
      report.worst_index = i;
    }
  }
  return report;
}

const ParamTensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t;
  throw data_error("checkpoint tensor not found: " + name);
}

void save_checkpoint(const std::string& prefix,
                     const std::vector<const ParamTensor*>& tensors,
                     const nlohmann::json& meta) {
  nlohmann::ordered_json manifest;
  manifest["dtype"] = "f64le";
  manifest["meta"] = meta;
  nlohmann::ordered_json list = nlohmann::ordered_json::array();
  std::size_t offset = 0;
  for (const ParamTensor* t : tensors) {
    nlohmann::ordered_json entry;
    entry["name"] = t->name;
    entry["shape"] = t->cols == 1 ? nlohmann::ordered_json::array({t->rows})
                                  : nlohmann::ordered_json::array({t->rows, t->cols});
    entry["offset"] = offset;
    entry["count"] = t->size();
    list.push_back(std::move(entry));
    offset += t->size() * sizeof(double);
  }
  manifest["tensors"] = std::move(list);

  std::ofstream mf(prefix + ".manifest.json");
  if (!mf) throw data_error("cannot write manifest: " + prefix + ".manifest.json");
  mf << manifest.dump(2) << "\n";

  std::ofstream bf(prefix + ".bin", std::ios::binary);
  if (!bf) throw data_error("cannot write blob: " + prefix + ".bin");
  for (const ParamTensor* t : tensors)
    bf.write(reinterpret_cast<const char*>(t->values.data()),
             static_cast<std::streamsize>(t->size() * sizeof(double)));
}

Checkpoint load_checkpoint(const std::string& prefix) {
  std::ifstream mf(prefix + ".manifest.json");
  if (!mf) throw data_error("cannot open manifest: " + prefix + ".manifest.json");
  nlohmann::json manifest = nlohmann::json::parse(mf, nullptr, false);
  if (manifest.is_discarded() || manifest.value("dtype", "") != "f64le")
    throw data_error("malformed manifest: " + prefix + ".manifest.json");

  std::ifstream bf(prefix + ".bin", std::ios::binary);
  if (!bf) throw data_error("cannot open blob: " + prefix + ".bin");

  Checkpoint ckpt;
  ckpt.meta = manifest.value("meta", nlohmann::json::object());
  for (const auto& entry : manifest.at("tensors")) {
    const auto shape = entry.at("shape");
    const std::size_t rows = shape.at(0).get<std::size_t>();
    const std::size_t cols = shape.size() > 1 ? shape.at(1).get<std::size_t>() : 1;
    ParamTensor t(entry.at("name").get<std::string>(), rows, cols);
    if (t.size() != entry.at("count").get<std::size_t>())
      throw data_error("manifest count mismatch for tensor " + t.name);
    bf.seekg(static_cast<std::streamoff>(entry.at("offset").get<std::size_t>()));
    bf.read(reinterpret_cast<char*>(t.values.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!bf) throw data_error("truncated checkpoint blob: " + prefix + ".bin");
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

}  // namespace gloie
