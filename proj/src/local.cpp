#include "gloie/local.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "json.hpp"

#include "gloie/errors.hpp"
#include "gloie/featurize.hpp"

namespace gloie {

const std::vector<double>* LocalEmbeddingTable::lookup(const std::string& user,
                                                       std::uint32_t item) const {
  auto uit = entries.find(user);
  if (uit == entries.end()) return nullptr;
  auto iit = uit->second.find(item);
  if (iit == uit->second.end()) return nullptr;
  return &iit->second;
}

std::size_t LocalEmbeddingTable::size() const {
  std::size_t n = 0;
  for (const auto& [user, items] : entries) n += items.size();
  return n;
}

LocalEncoderParams::LocalEncoderParams(std::size_t M_, std::size_t d_,
                                       std::uint64_t seed)
    : M(M_), d(d_), E("E", M_, d_), W_h("W_h", d_, 3), b_h("b_h", d_) {
  Rng rng(seed);
  init_uniform_fan(E, rng);
  init_uniform_fan(W_h, rng);
}

std::vector<ParamTensor*> LocalEncoderParams::params() {
  return {&E, &W_h, &b_h};
}

LocalFeatures local_features(const Instance& inst, double tau, std::size_t M) {
  if (inst.history.empty())
    throw data_error("local_features: empty history for user " + inst.user_id);
  const auto decayed = decayed_sum(inst.history, tau, M);
  const std::size_t T = inst.history.size();

  std::map<std::uint32_t, std::pair<std::size_t, std::size_t>> occ;  // item -> (count, last k)
  for (std::size_t k = 0; k < T; ++k)
    for (auto j : inst.history[k]) {
      auto& [count, last] = occ[j];
      ++count;
      last = k;
    }

  LocalFeatures out;
  out.items.reserve(occ.size());
  out.feats.reserve(occ.size());
  for (const auto& [item, cl] : occ) {
    const auto [count, last] = cl;
    const double gap = static_cast<double>(T - 1 - last);
    out.items.push_back(item);
    out.feats.push_back({decayed.values[item],
                         static_cast<double>(count) / static_cast<double>(T),
                         std::pow(tau, gap)});
  }
  return out;
}

LocalEmbedCache local_embed_forward(const Instance& inst,
                                    const LocalEncoderParams& params, double tau) {
  LocalEmbedCache cache;
  cache.features = local_features(inst, tau, params.M);
  const std::size_t d = params.d;
  cache.h.reserve(cache.features.items.size());
  cache.z.reserve(cache.features.items.size());
  for (std::size_t i = 0; i < cache.features.items.size(); ++i) {
    const auto item = cache.features.items[i];
    std::vector<double> h(d);
    affine_forward(params.W_h, params.b_h, cache.features.feats[i].data(), h.data());
    std::vector<double> z(d);
    const double* e = params.E.values.data() + item * d;
    for (std::size_t k = 0; k < d; ++k) z[k] = e[k] * h[k];
    cache.h.push_back(std::move(h));
    cache.z.push_back(std::move(z));
  }
  return cache;
}

std::vector<std::pair<std::uint32_t, std::vector<double>>> local_embed(
    const Instance& inst, const LocalEncoderParams& params, double tau) {
  auto cache = local_embed_forward(inst, params, tau);
  std::vector<std::pair<std::uint32_t, std::vector<double>>> out;
  out.reserve(cache.features.items.size());
  for (std::size_t i = 0; i < cache.features.items.size(); ++i)
    out.emplace_back(cache.features.items[i], std::move(cache.z[i]));
  return out;
}

void local_embed_backward(LocalEncoderParams& params, std::uint32_t item,
                          const std::array<double, 3>& f,
                          const std::vector<double>& h,
                          const std::vector<double>& dz) {
  const std::size_t d = params.d;
  const double* e = params.E.values.data() + item * d;
  double* dE = params.E.grad.data() + item * d;
  std::vector<double> dh(d);
  for (std::size_t k = 0; k < d; ++k) {
    dE[k] += dz[k] * h[k];
    dh[k] = dz[k] * e[k];
  }
  affine_backward(params.W_h, params.b_h, f.data(), dh.data(), nullptr);
}

LocalEmbeddingTable load_external_embeddings(const std::string& path,
                                             const Vocab& vocab) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open embedding file: " + path);

  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw data_error("empty embedding file: " + path);
  ++lineno;
  nlohmann::json header = nlohmann::json::parse(line, nullptr, false);
  if (header.is_discarded() || !header.is_object() || !header.contains("dim"))
    throw data_error("malformed embedding header at " + path + ":1");

  LocalEmbeddingTable table;
  table.dim = header.at("dim").get<std::size_t>();
  if (table.dim == 0) throw data_error("embedding dim must be >= 1");

  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("user") ||
        !j.contains("item") || !j.contains("vec") || !j["vec"].is_array())
      throw data_error("malformed embedding row at " + where);
    const auto user = j["user"].get<std::string>();
    const auto item_id = j["item"].get<std::string>();
    const auto idx = vocab.find(item_id);
    if (!idx) throw data_error("unknown item id '" + item_id + "' at " + where);
    std::vector<double> vec = j["vec"].get<std::vector<double>>();
    if (vec.size() != table.dim)
      throw data_error("dim mismatch (expected " + std::to_string(table.dim) +
                       ", got " + std::to_string(vec.size()) + ") at " + where);
    auto [it, inserted] = table.entries[user].emplace(
        static_cast<std::uint32_t>(*idx), std::move(vec));
    (void)it;
    if (!inserted)
      throw data_error("duplicate entry (" + user + ", " + item_id + ") at " + where);
  }
  return table;
}

void save_external_embeddings(const LocalEmbeddingTable& table,
                              const Vocab& vocab, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw data_error("cannot open output file: " + path);
  out << nlohmann::ordered_json{{"dim", table.dim}}.dump() << "\n";

  std::vector<std::string> users;
  users.reserve(table.entries.size());
  for (const auto& [user, items] : table.entries) users.push_back(user);
  std::sort(users.begin(), users.end());
  for (const auto& user : users) {
    const auto& items = table.entries.at(user);
    std::vector<std::uint32_t> idx;
    idx.reserve(items.size());
    for (const auto& [item, vec] : items) idx.push_back(item);
    std::sort(idx.begin(), idx.end());
    for (auto item : idx) {
      nlohmann::ordered_json j;
      j["user"] = user;
      j["item"] = vocab.item(item);
      j["vec"] = items.at(item);
      out << j.dump() << "\n";
    }
  }
}

}  // namespace gloie
