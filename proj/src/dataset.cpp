#include "gloie/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <unordered_set>

#include "json.hpp"

#include "gloie/errors.hpp"
#include "gloie/rng.hpp"

namespace gloie {

using ordered_json = nlohmann::ordered_json;

Vocab::Vocab(std::vector<std::string> items) : items_(std::move(items)) {
  if (items_.empty()) throw data_error("vocab must contain at least one item");
  index_.reserve(items_.size());
  for (std::size_t i = 0; i < items_.size(); ++i) {
    if (!index_.emplace(items_[i], i).second)
      throw data_error("duplicate vocab item: " + items_[i]);
  }
}

std::size_t Vocab::index(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw data_error("unknown item id: " + id);
  return it->second;
}

std::optional<std::size_t> Vocab::find(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::uint8_t> Instance::target_indicator(std::size_t M) const {
  std::vector<std::uint8_t> y(M, 0);
  for (auto j : target) y.at(j) = 1;
  return y;
}

std::vector<std::uint32_t> Instance::interacted() const {
  std::set<std::uint32_t> u;
  for (const auto& s : history) u.insert(s.begin(), s.end());
  return {u.begin(), u.end()};
}

namespace {

struct RawRecord {
  std::string user;
  std::vector<std::vector<std::string>> sets;  // each sorted + deduplicated
};

std::vector<RawRecord> parse_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open dataset file: " + path);

  std::vector<RawRecord> records;
  std::unordered_set<std::string> seen_users;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path + ":" + std::to_string(lineno);

    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("user") ||
        !j["user"].is_string() || !j.contains("sets") || !j["sets"].is_array())
      throw data_error("malformed record at " + where);

    RawRecord rec;
    rec.user = j["user"].get<std::string>();
    if (rec.user.empty()) throw data_error("empty user id at " + where);
    if (!seen_users.insert(rec.user).second)
      throw data_error("duplicate user '" + rec.user + "' at " + where);

    for (const auto& js : j["sets"]) {
      if (!js.is_array()) throw data_error("malformed set at " + where);
      std::set<std::string> items;
      for (const auto& ji : js) {
        if (!ji.is_string() || ji.get<std::string>().empty())
          throw data_error("malformed item id at " + where);
        items.insert(ji.get<std::string>());
      }
      if (items.empty()) throw data_error("empty set at " + where);
      rec.sets.emplace_back(items.begin(), items.end());
    }

    if (rec.sets.size() < 2) {
      std::cerr << "warning: user '" << rec.user << "' has fewer than 2 sets, skipping ("
                << where << ")\n";
      continue;
    }
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace

Dataset load_dataset(const std::string& path) {
  auto records = parse_jsonl(path);
  if (records.empty()) throw data_error("no usable records in " + path);

  std::set<std::string> universe;
  for (const auto& r : records)
    for (const auto& s : r.sets) universe.insert(s.begin(), s.end());

  Dataset ds;
  ds.vocab = Vocab({universe.begin(), universe.end()});
  ds.sequences.reserve(records.size());
  for (const auto& r : records) {
    UserSequence seq;
    seq.user_id = r.user;
    seq.sets.reserve(r.sets.size());
    for (const auto& s : r.sets) {
      std::vector<std::uint32_t> idx;
      idx.reserve(s.size());
      for (const auto& id : s)
        idx.push_back(static_cast<std::uint32_t>(ds.vocab.index(id)));
      // item strings are sorted and the vocab is lexicographic, so indices
      // are already ascending
      seq.sets.push_back(std::move(idx));
    }
    ds.sequences.push_back(std::move(seq));
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw data_error("cannot open output file: " + path);
  for (const auto& seq : ds.sequences) {
    ordered_json j;
    j["user"] = seq.user_id;
    ordered_json sets = ordered_json::array();
    for (const auto& s : seq.sets) {
      ordered_json items = ordered_json::array();
      for (auto idx : s) items.push_back(ds.vocab.item(idx));
      sets.push_back(std::move(items));
    }
    j["sets"] = std::move(sets);
    out << j.dump() << "\n";
  }
}

namespace {

// Minimal RFC4180-style row reader: quoted fields, "" escapes, \r\n endings.
bool read_csv_row(std::istream& in, std::vector<std::string>& fields) {
  fields.clear();
  std::string field;
  bool in_quotes = false, any = false;
  int c;
  while ((c = in.get()) != EOF) {
    any = true;
    char ch = static_cast<char>(c);
    if (in_quotes) {
      if (ch == '"') {
        if (in.peek() == '"') {
          field.push_back('"');
          in.get();
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(ch);
      }
    } else if (ch == '"') {
      in_quotes = true;
    } else if (ch == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (ch == '\n') {
      if (!field.empty() && field.back() == '\r') field.pop_back();
      fields.push_back(std::move(field));
      return true;
    } else {
      field.push_back(ch);
    }
  }
  if (!any) return false;
  if (!field.empty() && field.back() == '\r') field.pop_back();
  fields.push_back(std::move(field));
  return true;
}

std::size_t find_column(const std::vector<std::string>& header,
                        const std::string& name) {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw data_error("missing CSV column: " + name);
}

}  // namespace

void convert_csv(const std::string& csv_path, const std::string& out_path,
                 const std::string& user_col, const std::string& order_col,
                 const std::string& item_col) {
  std::ifstream in(csv_path);
  if (!in) throw data_error("cannot open CSV file: " + csv_path);

  std::vector<std::string> row;
  if (!read_csv_row(in, row)) throw data_error("empty CSV file: " + csv_path);
  const std::size_t uc = find_column(row, user_col);
  const std::size_t oc = find_column(row, order_col);
  const std::size_t ic = find_column(row, item_col);

  // user -> order -> items; std::map keeps both levels sorted
  std::map<std::string, std::map<double, std::set<std::string>>> grouped;
  std::size_t rowno = 1;
  while (read_csv_row(in, row)) {
    ++rowno;
    if (row.size() == 1 && row[0].empty()) continue;  // blank line
    const std::string where = csv_path + " row " + std::to_string(rowno);
    if (row.size() <= std::max({uc, oc, ic}))
      throw data_error("too few fields at " + where);
    const std::string& user = row[uc];
    const std::string& order_str = row[oc];
    const std::string& item = row[ic];
    if (user.empty() || item.empty())
      throw data_error("empty user or item at " + where);
    double order = 0.0;
    auto [p, ec] = std::from_chars(order_str.data(),
                                   order_str.data() + order_str.size(), order);
    if (ec != std::errc{} || p != order_str.data() + order_str.size() ||
        !std::isfinite(order))
      throw data_error("unparsable order value '" + order_str + "' at " + where);
    grouped[user][order].insert(item);
  }

  if (grouped.empty())
    std::cerr << "warning: CSV has no data rows, writing empty output\n";

  std::ofstream out(out_path);
  if (!out) throw data_error("cannot open output file: " + out_path);
  for (const auto& [user, by_order] : grouped) {
    ordered_json j;
    j["user"] = user;
    ordered_json sets = ordered_json::array();
    for (const auto& [order, items] : by_order) {
      (void)order;
      sets.push_back(ordered_json(items));
    }
    j["sets"] = std::move(sets);
    out << j.dump() << "\n";
  }
}

void save_vocab(const Vocab& vocab, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw data_error("cannot open output file: " + path);
  out << ordered_json{{"items", vocab.items()}}.dump() << "\n";
}

Vocab load_vocab(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open vocab file: " + path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object() || !j.contains("items"))
    throw data_error("malformed vocab file: " + path);
  return Vocab(j["items"].get<std::vector<std::string>>());
}

Split split_users(const std::vector<UserSequence>& sequences,
                  const SplitSpec& spec) {
  if (sequences.size() < 10)
    throw data_error("need at least 10 users to split, got " +
                     std::to_string(sequences.size()));
  if (spec.train < 0 || spec.val < 0 || spec.test < 0 ||
      std::abs(spec.train + spec.val + spec.test - 1.0) > 1e-9)
    throw config_error("split fractions must be non-negative and sum to 1");

  const std::size_t n = sequences.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(spec.seed);
  deterministic_shuffle(order, rng);

  const auto n_train = static_cast<std::size_t>(std::llround(spec.train * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::llround(spec.val * static_cast<double>(n)));
  if (n_train + n_val > n) throw config_error("degenerate split fractions");

  Split split;
  split.train.assign(order.begin(), order.begin() + n_train);
  split.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  split.test.assign(order.begin() + n_train + n_val, order.end());
  return split;
}

Instance make_instance(const UserSequence& seq) {
  if (seq.sets.size() < 2)
    throw data_error("user '" + seq.user_id + "' needs at least 2 sets");
  Instance inst;
  inst.user_id = seq.user_id;
  inst.history.assign(seq.sets.begin(), seq.sets.end() - 1);
  inst.target = seq.sets.back();
  return inst;
}

}  // namespace gloie
