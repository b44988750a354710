#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <unordered_set>
#include <vector>

#include "srp4ctr/common.hpp"
#include "srp4ctr/config.hpp"
#include "srp4ctr/data.hpp"

namespace srp4ctr {

struct SyntheticOutput {
  PretrainCorpus pretrain;
  FinetuneCorpus finetune;
  std::vector<double> affinity;        // noise-free affinity per finetune example
  double threshold = 0.0;              // label threshold actually applied
  std::vector<std::uint64_t> item_freq;  // event counts per item id
};

namespace detail {

// Item catalogue with Zipf popularity (id 1 most popular) and a fixed genre
// per item.
struct Catalogue {
  std::vector<int> genre;               // per item id, 0-based genre
  std::vector<double> cum;              // cumulative popularity weights
  std::vector<std::vector<int>> by_genre;

  Catalogue(const SyntheticConfig& cfg, std::uint64_t seed) {
    Rng rng(mix_seed(seed, "items"));
    genre.resize(static_cast<std::size_t>(cfg.items) + 1, 0);
    by_genre.resize(static_cast<std::size_t>(cfg.genres));
    cum.resize(static_cast<std::size_t>(cfg.items) + 1, 0.0);
    double total = 0.0;
    for (int i = 1; i <= cfg.items; ++i) {
      genre[i] = static_cast<int>(rng.below(static_cast<std::uint32_t>(cfg.genres)));
      by_genre[genre[i]].push_back(i);
      total += std::pow(static_cast<double>(i), -cfg.zipf);
      cum[i] = total;
    }
  }

  int sample_popular(Rng& rng) const {
    const double u = rng.uniform() * cum.back();
    const auto it = std::lower_bound(cum.begin() + 1, cum.end(), u);
    return static_cast<int>(it - cum.begin());
  }
};

struct UserProfile {
  std::vector<int> pref_genres;
  std::vector<double> strengths;
  std::vector<int> favorites;
  std::unordered_set<int> favorite_set;

  bool prefers(int g, double& strength) const {
    for (std::size_t k = 0; k < pref_genres.size(); ++k) {
      if (pref_genres[k] == g) {
        strength = strengths[k];
        return true;
      }
    }
    return false;
  }
};

inline UserProfile make_profile(const SyntheticConfig& cfg, const Catalogue& cat,
                                Rng& rng) {
  UserProfile u;
  std::vector<int> all(static_cast<std::size_t>(cfg.genres));
  for (int g = 0; g < cfg.genres; ++g) all[g] = g;
  rng.shuffle(all);
  u.pref_genres.assign(all.begin(), all.begin() + cfg.genres_per_user);
  const double s1 = 1.5 + rng.uniform();
  for (int k = 0; k < cfg.genres_per_user; ++k)
    u.strengths.push_back(s1 * std::pow(0.7, k));

  std::vector<int> pref_pool;
  for (int g : u.pref_genres)
    pref_pool.insert(pref_pool.end(), cat.by_genre[g].begin(), cat.by_genre[g].end());
  if (pref_pool.empty())
    for (int i = 1; i < static_cast<int>(cat.genre.size()); ++i) pref_pool.push_back(i);

  const int pool_size = std::min<int>(cfg.favorites, static_cast<int>(pref_pool.size()));
  while (static_cast<int>(u.favorites.size()) < pool_size) {
    int item = 0;
    if (rng.uniform() < 0.7) {
      for (int tries = 0; tries < 200; ++tries) {
        const int cand = cat.sample_popular(rng);
        double s;
        if (u.prefers(cat.genre[cand], s)) {
          item = cand;
          break;
        }
      }
    }
    if (item == 0) item = pref_pool[rng.below(static_cast<std::uint32_t>(pref_pool.size()))];
    if (u.favorite_set.insert(item).second) u.favorites.push_back(item);
  }
  return u;
}

inline double affinity(const UserProfile& u, const Catalogue& cat, int item,
                       double fav_bonus) {
  double s = 0.0;
  double a = u.prefers(cat.genre[item], s) ? s : 0.0;
  if (u.favorite_set.count(item)) a += fav_bonus;
  return a;
}

inline InteractionEvent make_event(const SyntheticConfig& cfg, const Catalogue& cat,
                                   const UserProfile& u, int item, Rng& rng) {
  InteractionEvent ev;
  const int true_genre = cat.genre[item];
  const int tag = rng.uniform() < 1.0 - cfg.tag_noise
                      ? true_genre
                      : static_cast<int>(rng.below(static_cast<std::uint32_t>(cfg.genres)));
  ev.item_ids = {item, tag + 1};

  const double a = affinity(u, cat, item, cfg.fav_bonus);
  const double p_type = 1.0 / (1.0 + std::exp(-(a - 1.0)));
  const double p_level = 1.0 / (1.0 + std::exp(-(a - 0.5)));
  int action = 1, level = 1;
  for (int j = 1; j < cfg.behavior_types; ++j)
    if (rng.uniform() < p_type) ++action;
  for (int j = 1; j < cfg.behavior_levels; ++j)
    if (rng.uniform() < p_level) ++level;
  ev.behavior_ids = {action, level};
  return ev;
}

}  // namespace detail

// Planted-preference corpus: users favor a couple of genres and repeatedly
// revisit a small favorite pool; labels come from thresholding genre affinity
// plus logistic noise, with the threshold calibrated to the configured
// positive rate. Fully deterministic in (config, seed).
inline SyntheticOutput generate_synthetic(const SyntheticConfig& cfg, std::uint64_t seed) {
  detail::Catalogue cat(cfg, seed);
  SyntheticOutput out;
  out.item_freq.assign(static_cast<std::size_t>(cfg.items) + 1, 0);

  std::vector<double> scores;
  for (long uid = 1; uid <= cfg.users; ++uid) {
    Rng rng(mix_seed(seed, "user", static_cast<std::uint64_t>(uid)));
    const detail::UserProfile profile = detail::make_profile(cfg, cat, rng);

    InteractionSequence seq;
    seq.user_id = uid;
    const int len = cfg.min_len + static_cast<int>(rng.below(
                                      static_cast<std::uint32_t>(cfg.max_len - cfg.min_len + 1)));
    for (int i = 0; i < len; ++i) {
      const int item =
          rng.uniform() < cfg.repeat_prob
              ? profile.favorites[rng.below(static_cast<std::uint32_t>(profile.favorites.size()))]
              : cat.sample_popular(rng);
      seq.events.push_back(detail::make_event(cfg, cat, profile, item, rng));
      ++out.item_freq[item];
    }
    out.pretrain.sequences.push_back(seq);

    const int segment = 1 + profile.pref_genres[0] % cfg.context_buckets;
    for (int j = 0; j < cfg.examples_per_user; ++j) {
      const int cand =
          rng.uniform() < 0.5
              ? profile.favorites[rng.below(static_cast<std::uint32_t>(profile.favorites.size()))]
              : cat.sample_popular(rng);
      CtrExample ex;
      ex.sequence = seq;
      const int tag = rng.uniform() < 1.0 - cfg.tag_noise
                          ? cat.genre[cand]
                          : static_cast<int>(rng.below(static_cast<std::uint32_t>(cfg.genres)));
      ex.target_item = {cand, tag + 1};
      ex.context_features = {segment};
      out.finetune.examples.push_back(std::move(ex));

      const double a = detail::affinity(profile, cat, cand, cfg.fav_bonus);
      out.affinity.push_back(a);
      const double u01 = rng.uniform();
      const double logistic = std::log(u01 / (1.0 - u01));
      scores.push_back(a + cfg.noise * logistic);
    }
  }

  // Threshold at the (1 - positive_rate) quantile of realized scores.
  std::vector<double> sorted = scores;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t cut = static_cast<std::size_t>(
      (1.0 - cfg.positive_rate) * static_cast<double>(sorted.size()));
  out.threshold = sorted[std::min(cut, sorted.size() - 1)];
  for (std::size_t i = 0; i < scores.size(); ++i)
    out.finetune.examples[i].label = scores[i] > out.threshold ? 1 : 0;
  return out;
}

}  // namespace srp4ctr
