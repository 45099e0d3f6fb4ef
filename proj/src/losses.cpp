#include "batman/losses.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <stdexcept>

namespace batman {

namespace {

void check_labels(const Tensor& x, const std::vector<int>& labels, const char* what) {
  require_ndim(x, 2, what);
  if (labels.size() != x.dim(0)) {
    throw ShapeError(std::string(what) + ": " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(x.dim(0)) + " rows");
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= x.dim(1)) {
      throw std::out_of_range(std::string(what) + ": label " + std::to_string(l) + " out of range");
    }
  }
}

struct CeForward {
  double loss = 0.0;
  std::vector<std::size_t> selected;
  Tensor probs;
};

CeForward ce_forward(const Tensor& logits, const std::vector<int>& labels, double top_fraction) {
  if (!(top_fraction > 0.0 && top_fraction <= 1.0)) {
    throw std::invalid_argument("bootstrapped_ce: top_fraction must be in (0, 1]");
  }
  check_labels(logits, labels, "bootstrapped_ce");
  const std::size_t n = logits.dim(0), s = logits.dim(1);
  if (n == 0) throw ShapeError("bootstrapped_ce: no pixels");
  std::vector<double> ce(n), probs(n * s);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = logits.raw() + i * s;
    const double mx = *std::max_element(row, row + s);
    double z = 0.0;
    for (std::size_t c = 0; c < s; ++c) z += std::exp(row[c] - mx);
    for (std::size_t c = 0; c < s; ++c) probs[i * s + c] = std::exp(row[c] - mx) / z;
    ce[i] = std::log(z) + mx - row[labels[i]];
  }
  const auto k = static_cast<std::size_t>(std::ceil(top_fraction * static_cast<double>(n) - 1e-9));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ce[a] > ce[b]; });
  order.resize(std::max<std::size_t>(k, 1));
  CeForward out;
  for (std::size_t i : order) out.loss += ce[i];
  out.loss /= static_cast<double>(order.size());
  out.selected = std::move(order);
  out.probs = Tensor({n, s}, std::move(probs));
  return out;
}

struct JaccardTerms {
  std::vector<int> slots;
  std::vector<double> inter, uni;
};

JaccardTerms jaccard_terms(const Tensor& probs, const std::vector<int>& labels) {
  check_labels(probs, labels, "soft_jaccard");
  const std::size_t n = probs.dim(0), s = probs.dim(1);
  std::vector<bool> present(s, false);
  for (int l : labels) present[l] = true;
  JaccardTerms t;
  for (std::size_t c = 1; c < s; ++c) {
    if (!present[c]) continue;
    double inter = 0.0, uni = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double p = probs[i * s + c];
      const double g = labels[i] == static_cast<int>(c) ? 1.0 : 0.0;
      inter += p * g;
      uni += p + g - p * g;
    }
    t.slots.push_back(static_cast<int>(c));
    t.inter.push_back(inter);
    t.uni.push_back(uni);
  }
  return t;
}

double jaccard_value(const JaccardTerms& t) {
  if (t.slots.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < t.slots.size(); ++i) total += 1.0 - t.inter[i] / t.uni[i];
  return total / static_cast<double>(t.slots.size());
}

}  // namespace

double bootstrapped_ce(const Tensor& logits, const std::vector<int>& labels, double top_fraction) {
  return ce_forward(logits, labels, top_fraction).loss;
}

Var bootstrapped_ce(Var logits, const std::vector<int>& labels, double top_fraction) {
  auto fwd = ce_forward(logits.value(), labels, top_fraction);
  const double loss = fwd.loss;
  auto state = std::make_shared<CeForward>(std::move(fwd));
  return logits.tape->record(Tensor::scalar(loss), {logits}, [state, labels](const Tensor& g) {
    const Tensor& p = state->probs;
    const std::size_t s = p.dim(1);
    std::vector<double> d(p.numel(), 0.0);
    const double w = g[0] / static_cast<double>(state->selected.size());
    for (std::size_t i : state->selected) {
      for (std::size_t c = 0; c < s; ++c) d[i * s + c] = w * p[i * s + c];
      d[i * s + labels[i]] -= w;
    }
    return std::vector<Tensor>{Tensor(p.shape(), std::move(d))};
  });
}

double soft_jaccard(const Tensor& probs, const std::vector<int>& labels) {
  return jaccard_value(jaccard_terms(probs, labels));
}

Var soft_jaccard(Var probs, const std::vector<int>& labels) {
  auto terms = std::make_shared<JaccardTerms>(jaccard_terms(probs.value(), labels));
  const Shape shape = probs.shape();
  return probs.tape->record(Tensor::scalar(jaccard_value(*terms)), {probs},
                            [terms, labels, shape](const Tensor& g) {
                              const std::size_t n = shape[0], s = shape[1];
                              std::vector<double> d(n * s, 0.0);
                              if (terms->slots.empty()) return std::vector<Tensor>{Tensor(shape, std::move(d))};
                              const double w = g[0] / static_cast<double>(terms->slots.size());
                              for (std::size_t k = 0; k < terms->slots.size(); ++k) {
                                const int c = terms->slots[k];
                                const double I = terms->inter[k], U = terms->uni[k];
                                // d(1 - I/U)/dp = -(dI U - I dU) / U^2, dI = g, dU = 1 - g.
                                for (std::size_t i = 0; i < n; ++i) {
                                  const double gi = labels[i] == c ? 1.0 : 0.0;
                                  d[i * s + c] = -w * (gi * U - I * (1.0 - gi)) / (U * U);
                                }
                              }
                              return std::vector<Tensor>{Tensor(shape, std::move(d))};
                            });
}

}  // namespace batman
