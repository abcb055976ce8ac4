#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace gloie {

/// Dense item vocabulary: external string ids <-> contiguous indices [0, M).
/// Items are stored in lexicographic order so indices are stable across
/// save/load of the same item universe.
class Vocab {
 public:
  Vocab() = default;
  explicit Vocab(std::vector<std::string> items);

  std::size_t size() const { return items_.size(); }
  const std::string& item(std::size_t idx) const { return items_.at(idx); }
  const std::vector<std::string>& items() const { return items_; }

  /// Throws data_error naming the id when unknown.
  std::size_t index(const std::string& id) const;
  std::optional<std::size_t> find(const std::string& id) const;

  friend bool operator==(const Vocab& a, const Vocab& b) {
    return a.items_ == b.items_;
  }

 private:
  std::vector<std::string> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// One user's chronological item sets. Each set holds sorted, deduplicated
/// indices into the owning Vocab; |sets| >= 2.
struct UserSequence {
  std::string user_id;
  std::vector<std::vector<std::uint32_t>> sets;

  friend bool operator==(const UserSequence&, const UserSequence&) = default;
};

/// Prediction instance: all but the last set as history, last set as target.
struct Instance {
  std::string user_id;
  std::vector<std::vector<std::uint32_t>> history;
  std::vector<std::uint32_t> target;  // sorted indices of the final set

  std::vector<std::uint8_t> target_indicator(std::size_t M) const;
  /// Sorted union of all history sets (the "interacted at least once" items).
  std::vector<std::uint32_t> interacted() const;
};

struct SplitSpec {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
  std::uint64_t seed = 0;
};

/// Disjoint index lists into the source sequence vector.
struct Split {
  std::vector<std::size_t> train, val, test;
};

struct Dataset {
  Vocab vocab;
  std::vector<UserSequence> sequences;
};

/// Reads the canonical JSON Lines format:
///   {"user": "<id>", "sets": [["<item>", ...], ...]}
/// Malformed lines and empty sets abort with the line number; users with
/// fewer than two sets are skipped with a warning.
Dataset load_dataset(const std::string& path);

/// Writes canonical JSON Lines; inverse of load_dataset on canonical data.
void save_dataset(const Dataset& ds, const std::string& path);

/// CSV (with header) -> canonical JSONL. Events sharing (user, order) merge
/// into one set; output is sorted by user id, then set order.
void convert_csv(const std::string& csv_path, const std::string& out_path,
                 const std::string& user_col, const std::string& order_col,
                 const std::string& item_col);

void save_vocab(const Vocab& vocab, const std::string& path);
Vocab load_vocab(const std::string& path);

/// Deterministic by-user partition; sizes are llround(fraction * N) for
/// train/val with the remainder as test.
Split split_users(const std::vector<UserSequence>& sequences,
                  const SplitSpec& spec);

Instance make_instance(const UserSequence& seq);

}  // namespace gloie
