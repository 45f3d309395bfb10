#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "memmeter/dataset.hpp"
#include "memmeter/error.hpp"
#include "memmeter/random.hpp"

namespace memmeter {

// Per-episode image sets. A is fixed across episodes; B (seen, used for the
// seen/unseen fine-tune) and C (never seen) are redrawn every episode.
// held_seen/held_unseen are only filled for held-out calibration.
struct EpisodeSets {
  std::vector<std::string> set_a;
  std::vector<std::string> set_b;
  std::vector<std::string> set_c;
  std::vector<std::string> held_seen;
  std::vector<std::string> held_unseen;
};

namespace detail {

// First `count` entries of a seeded permutation of `pool`.
inline std::vector<std::string> draw_without_replacement(std::vector<std::string> pool, std::size_t count, Rng& rng) {
  // Partial Fisher-Yates from the front.
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(count);
  return pool;
}

inline void check_set_a(const Dataset& dataset, std::span<const std::string> set_a, std::size_t n) {
  if (n == 0) throw config_error("set size n must be at least 1");
  if (set_a.size() != n) {
    throw config_error("set A has " + std::to_string(set_a.size()) + " ids but n = " + std::to_string(n));
  }
  std::unordered_set<std::string> seen;
  for (const auto& id : set_a) {
    if (!dataset.contains(id)) throw data_error("set A id " + id + " is not in the dataset");
    if (!seen.insert(id).second) throw config_error("set A lists " + id + " twice");
  }
}

}  // namespace detail

// Draws B and C uniformly without replacement from dataset \ A, plus
// `held_out` extra seen and unseen images for held-out calibration. When an
// `unseen_pool` dataset is given, C and held_unseen are drawn from it instead
// (its ids must not collide with the main dataset).
inline EpisodeSets sample_episode_sets(const Dataset& dataset, std::span<const std::string> set_a, std::size_t n,
                                       std::uint64_t episode_seed, std::size_t held_out = 0,
                                       const Dataset* unseen_pool = nullptr) {
  detail::check_set_a(dataset, set_a, n);
  const std::unordered_set<std::string> a_ids(set_a.begin(), set_a.end());
  std::vector<std::string> rest;
  for (const auto& img : dataset.images()) {
    if (!a_ids.contains(img.id)) rest.push_back(img.id);
  }

  EpisodeSets sets;
  sets.set_a.assign(set_a.begin(), set_a.end());
  Rng rng(derive_seed(episode_seed, "episode-sets"));

  if (unseen_pool == nullptr) {
    const std::size_t needed = 2 * n + 2 * held_out;
    if (rest.size() < needed) {
      throw config_error("dataset has " + std::to_string(dataset.size()) + " images; an episode with n = " +
                         std::to_string(n) + " needs at least " + std::to_string(n + needed));
    }
    auto drawn = detail::draw_without_replacement(std::move(rest), needed, rng);
    auto it = drawn.begin();
    sets.set_b.assign(it, it + static_cast<std::ptrdiff_t>(n));
    it += static_cast<std::ptrdiff_t>(n);
    sets.set_c.assign(it, it + static_cast<std::ptrdiff_t>(n));
    it += static_cast<std::ptrdiff_t>(n);
    sets.held_seen.assign(it, it + static_cast<std::ptrdiff_t>(held_out));
    it += static_cast<std::ptrdiff_t>(held_out);
    sets.held_unseen.assign(it, drawn.end());
    return sets;
  }

  if (rest.size() < n + held_out) {
    throw config_error("dataset has " + std::to_string(dataset.size()) + " images; n = " + std::to_string(n) +
                       " needs at least " + std::to_string(2 * n + held_out));
  }
  std::vector<std::string> unseen_ids;
  for (const auto& img : unseen_pool->images()) {
    if (dataset.contains(img.id)) throw data_error("unseen pool id " + img.id + " collides with the dataset");
    unseen_ids.push_back(img.id);
  }
  if (unseen_ids.size() < n + held_out) {
    throw config_error("unseen pool has " + std::to_string(unseen_ids.size()) + " images; needs at least " +
                       std::to_string(n + held_out));
  }
  auto seen = detail::draw_without_replacement(std::move(rest), n + held_out, rng);
  auto unseen = detail::draw_without_replacement(std::move(unseen_ids), n + held_out, rng);
  sets.set_b.assign(seen.begin(), seen.begin() + static_cast<std::ptrdiff_t>(n));
  sets.held_seen.assign(seen.begin() + static_cast<std::ptrdiff_t>(n), seen.end());
  sets.set_c.assign(unseen.begin(), unseen.begin() + static_cast<std::ptrdiff_t>(n));
  sets.held_unseen.assign(unseen.begin() + static_cast<std::ptrdiff_t>(n), unseen.end());
  return sets;
}

}  // namespace memmeter
