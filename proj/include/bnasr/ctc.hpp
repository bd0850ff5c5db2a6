#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "bnasr/alphabet.hpp"
#include "bnasr/lm.hpp"
#include "bnasr/tensor.hpp"

namespace bnasr {

/// Minimum number of frames that can emit `target`: one per label plus one
/// blank between each pair of equal neighbours.
inline std::size_t ctc_min_frames(const Labels& target) {
  std::size_t need = target.size();
  for (std::size_t i = 1; i < target.size(); ++i) need += target[i] == target[i - 1];
  return need;
}

inline bool ctc_feasible(const Labels& target, std::size_t frames) { return ctc_min_frames(target) <= frames; }

template <typename Real>
struct CtcResult {
  double loss = 0;                 // -ln P(target | x)
  Tensor<Real> grad;               // d loss / d log_probs, frames x classes
};

namespace detail {

inline double lse(double a, double b) { return log_add_exp(a, b); }

inline void check_ctc_inputs(std::size_t frames, std::size_t classes, const Labels& target) {
  if (classes < 2) throw ShapeError("ctc: need a blank and at least one label");
  for (int l : target) {
    if (l <= 0 || std::size_t(l) >= classes) {
      throw ShapeError("ctc: target label " + std::to_string(l) + " outside [1, " + std::to_string(classes - 1) + "]");
    }
  }
  if (!ctc_feasible(target, frames)) {
    throw DataError("ctc: target of length " + std::to_string(target.size()) + " needs " +
                    std::to_string(ctc_min_frames(target)) + " frames, utterance has " + std::to_string(frames));
  }
}

}  // namespace detail

/// CTC negative log-likelihood and its gradient with respect to the
/// log-probabilities (frames x classes, blank = 0). Both recursions run in the
/// log domain; beta excludes the emission at its own frame, so the state
/// occupancy is alpha * beta / P.
template <typename Real>
CtcResult<Real> ctc_loss(const Tensor<Real>& log_probs, const Labels& target) {
  require_rank(log_probs, 2, "ctc log_probs");
  const std::size_t t_len = log_probs.dim(0), k = log_probs.dim(1);
  detail::check_ctc_inputs(t_len, k, target);
  const double ninf = kNegInf<double>;
  const std::size_t s_len = 2 * target.size() + 1;
  auto sym = [&](std::size_t s) { return s % 2 == 0 ? 0 : target[(s - 1) / 2]; };
  auto skip_allowed = [&](std::size_t s) { return s >= 2 && sym(s) != 0 && sym(s) != sym(s - 2); };
  auto lp = [&](std::size_t t, std::size_t c) { return double(log_probs(t, c)); };

  CtcResult<Real> out;
  out.grad = Tensor<Real>({t_len, k});
  if (t_len == 0) {
    // Only the empty target reaches here, with probability one.
    return out;
  }
  std::vector<double> alpha(t_len * s_len, ninf), beta(t_len * s_len, ninf);
  alpha[0] = lp(0, 0);
  if (s_len > 1) alpha[1] = lp(0, std::size_t(sym(1)));
  for (std::size_t t = 1; t < t_len; ++t) {
    const double* prev = &alpha[(t - 1) * s_len];
    double* cur = &alpha[t * s_len];
    for (std::size_t s = 0; s < s_len; ++s) {
      double a = prev[s];
      if (s >= 1) a = detail::lse(a, prev[s - 1]);
      if (skip_allowed(s)) a = detail::lse(a, prev[s - 2]);
      cur[s] = a == ninf ? ninf : a + lp(t, std::size_t(sym(s)));
    }
  }
  const double* last = &alpha[(t_len - 1) * s_len];
  const double log_p = s_len > 1 ? detail::lse(last[s_len - 1], last[s_len - 2]) : last[0];

  beta[(t_len - 1) * s_len + s_len - 1] = 0;
  if (s_len > 1) beta[(t_len - 1) * s_len + s_len - 2] = 0;
  for (std::size_t t = t_len - 1; t-- > 0;) {
    const double* next = &beta[(t + 1) * s_len];
    double* cur = &beta[t * s_len];
    for (std::size_t s = 0; s < s_len; ++s) {
      double b = next[s] + lp(t + 1, std::size_t(sym(s)));
      if (s + 1 < s_len) b = detail::lse(b, next[s + 1] + lp(t + 1, std::size_t(sym(s + 1))));
      if (s + 2 < s_len && skip_allowed(s + 2)) b = detail::lse(b, next[s + 2] + lp(t + 1, std::size_t(sym(s + 2))));
      cur[s] = b;
    }
  }

  out.loss = -log_p;
  std::vector<double> occ(k);
  for (std::size_t t = 0; t < t_len; ++t) {
    std::fill(occ.begin(), occ.end(), ninf);
    for (std::size_t s = 0; s < s_len; ++s) {
      const double v = alpha[t * s_len + s] + beta[t * s_len + s];
      auto& o = occ[std::size_t(sym(s))];
      o = detail::lse(o, v);
    }
    for (std::size_t c = 0; c < k; ++c) out.grad(t, c) = Real(-std::exp(occ[c] - log_p));
  }
  return out;
}

/// Best path: per-frame argmax (lowest index on ties), repeats merged, blanks dropped.
template <typename Real>
Labels greedy_decode(const Tensor<Real>& log_probs) {
  require_rank(log_probs, 2, "greedy_decode log_probs");
  Labels out;
  int prev = -1;
  for (std::size_t t = 0; t < log_probs.dim(0); ++t) {
    const Real* row = log_probs.row(t);
    int best = 0;
    for (std::size_t c = 1; c < log_probs.dim(1); ++c) {
      if (row[c] > row[best]) best = int(c);
    }
    if (best != prev && best != Alphabet::kBlank) out.push_back(best);
    prev = best;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Prefix beam search with word-level n-gram fusion.

struct BeamOptions {
  std::size_t beam_width = 100;
  double alpha = 0.75;  // LM weight applied to ln P(word | history)
  double beta = 1.0;    // bonus per completed word
};

/// Called whenever a prefix is first extended into a new child prefix, with
/// the parent's score before the frame and the child's initial score.
using BeamObserver = std::function<void(const Labels& parent, double parent_score, const Labels& child,
                                        double child_score)>;

class BeamSearchDecoder {
 public:
  /// `lm` may be null, in which case the search is purely acoustic and
  /// alpha/beta are unused. `alphabet` supplies the space label and spelling.
  BeamSearchDecoder(const Alphabet& alphabet, const NGramModel* lm, BeamOptions options = {})
      : alphabet_(&alphabet), lm_(lm), opt_(options) {
    if (opt_.beam_width == 0) throw ConfigError("beam width must be positive");
    if (lm_ && alphabet.space_label() < 0) throw ConfigError("LM fusion needs a space symbol in the alphabet");
  }

  void set_observer(BeamObserver obs) { observer_ = std::move(obs); }
  const BeamOptions& options() const { return opt_; }

  template <typename Real>
  Labels decode(const Tensor<Real>& log_probs) const {
    require_rank(log_probs, 2, "beam search log_probs");
    const std::size_t t_len = log_probs.dim(0), k = log_probs.dim(1);
    if (k != alphabet_->num_classes()) {
      throw ShapeError("beam search: " + std::to_string(k) + " classes for an alphabet of " +
                       std::to_string(alphabet_->size()));
    }
    const double ninf = kNegInf<double>;
    const int space = alphabet_->space_label();

    std::map<Labels, Hyp> beam;
    beam[{}] = Hyp{0.0, ninf, 0.0};
    for (std::size_t t = 0; t < t_len; ++t) {
      std::map<Labels, Hyp> next;
      auto slot = [&](const Labels& p, double bonus) -> Hyp& {
        auto [it, fresh] = next.try_emplace(p, Hyp{ninf, ninf, bonus});
        return it->second;
      };
      for (const auto& [prefix, h] : beam) {
        const double total = h.acoustic();
        // Blank keeps the prefix.
        {
          Hyp& s = slot(prefix, h.bonus);
          s.pb = detail::lse(s.pb, total + double(log_probs(t, 0)));
        }
        for (std::size_t c = 1; c < k; ++c) {
          const double y = double(log_probs(t, c));
          const int label = int(c);
          if (!prefix.empty() && prefix.back() == label) {
            // Repeat collapses unless separated by a blank.
            Hyp& s = slot(prefix, h.bonus);
            s.pnb = detail::lse(s.pnb, h.pnb + y);
            Labels child = prefix;
            child.push_back(label);
            const bool fresh = !next.count(child) && !beam.count(child);
            Hyp& e = slot(child, h.bonus);
            e.pnb = detail::lse(e.pnb, h.pb + y);
            if (fresh && observer_) observer_(prefix, h.score(), child, h.pb + y + h.bonus);
          } else {
            Labels child = prefix;
            child.push_back(label);
            double bonus = h.bonus;
            if (label == space) bonus += word_bonus(prefix);
            const bool fresh = !next.count(child) && !beam.count(child);
            Hyp& e = slot(child, bonus);
            e.pnb = detail::lse(e.pnb, total + y);
            if (fresh && observer_) observer_(prefix, h.score(), child, total + y + bonus);
          }
        }
      }
      beam = prune(std::move(next));
    }

    const Labels* best = nullptr;
    double best_score = ninf;
    for (const auto& [prefix, h] : beam) {
      double s = h.score();
      if (prefix.empty() || prefix.back() != space) s += word_bonus(prefix);
      // Map order is lexicographic, so strict comparison keeps the first of equals.
      if (!best || s > best_score) {
        best = &prefix;
        best_score = s;
      }
    }
    return best ? *best : Labels{};
  }

 private:
  struct Hyp {
    double pb, pnb;  // ln P(prefix, ending in blank / non-blank)
    double bonus;    // accumulated alpha * ln P_lm + beta over completed words

    double acoustic() const { return log_add_exp(pb, pnb); }
    double score() const { return acoustic() + bonus; }
  };

  /// alpha ln P(w | previous three words) + beta for the last word of `prefix`,
  /// or 0 when the prefix does not end in a word.
  double word_bonus(const Labels& prefix) const {
    if (!lm_) return 0;
    const int space = alphabet_->space_label();
    std::vector<std::string> words(1);
    for (int l : prefix) {
      if (l == space) {
        if (!words.back().empty()) words.emplace_back();
      } else {
        utf8::append(words.back(), alphabet_->symbol(l));
      }
    }
    if (words.back().empty()) return 0;
    double lm_term = 0;
    if (opt_.alpha != 0) {
      const std::size_t n_ctx = std::min<std::size_t>(words.size() - 1, 3);
      std::vector<std::string> ctx(words.end() - 1 - std::ptrdiff_t(n_ctx), words.end() - 1);
      lm_term = opt_.alpha * kLn10 * lm_->score(ctx, words.back());
    }
    return lm_term + opt_.beta;
  }

  std::map<Labels, Hyp> prune(std::map<Labels, Hyp> next) const {
    if (next.size() <= opt_.beam_width) return next;
    std::vector<std::pair<double, const Labels*>> order;
    order.reserve(next.size());
    for (const auto& [p, h] : next) order.emplace_back(h.score(), &p);
    // Stable on the lexicographic map order: equal scores keep the smaller prefix.
    std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    std::map<Labels, Hyp> kept;
    for (std::size_t i = 0; i < opt_.beam_width; ++i) kept.emplace(*order[i].second, next.at(*order[i].second));
    return kept;
  }

  static constexpr double kLn10 = 2.302585092994045684;

  const Alphabet* alphabet_;
  const NGramModel* lm_;
  BeamOptions opt_;
  BeamObserver observer_;
};

}  // namespace bnasr
