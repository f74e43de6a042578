#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tpsn/core.hpp"
#include "tpsn/fidelity.hpp"
#include "tpsn/regularizers.hpp"
#include "tpsn/sampler.hpp"

namespace tpsn {

/// Weights of the fidelity, ReLU Jacobian and Laplacian terms.
struct LossWeights {
  double fidelity = 1.0;
  double jacobian = 1.0;
  double laplacian = 0.01;

  void validate() const {
    for (double w : {fidelity, jacobian, laplacian}) {
      if (!(w >= 0.0) || !std::isfinite(w)) throw InvalidParameterError("loss weights must be finite and >= 0");
    }
  }
};

enum class Method { rmsprop, adam, gradient_descent };

struct OptimizerConfig {
  Method method = Method::rmsprop;
  double step_size = 1e-2;
  int iterations = 500;
  double rms_decay = 0.99;
  double adam_beta1 = 0.9;
  double epsilon = 1e-8;
  /// Stop when the total loss improved by less than `tolerance` (relative)
  /// over the last `patience` iterations. tolerance <= 0 disables the test.
  double tolerance = 1e-7;
  int patience = 25;
  /// Backtrack by halving until the total loss does not increase.
  bool step_halving = true;
  int max_halvings = 12;
  /// With step halving on, a fold-free iterate only accepts fold-free
  /// candidates. Inactive when the Jacobian weight is 0.
  bool keep_fold_free = true;
  /// The fidelity and Laplacian gradients are blurred with K^T K, K a
  /// Gaussian of this sigma (in nodes), before the update; 0 disables it.
  /// The Jacobian gradient is never blurred.
  double smoothing_sigma = 4.0;
  /// RMSprop keeps one running mean square per object instead of one per
  /// element, so the update stays a positive multiple of the direction.
  bool global_rms = true;
  SamplerOptions sampler{};
  RegularizerOptions regularizer{};
  ChanVeseOptions chan_vese{};

  void validate() const {
    if (!(step_size > 0.0) || !std::isfinite(step_size)) throw InvalidParameterError("step size must be > 0");
    if (iterations <= 0) throw InvalidParameterError("iteration count must be > 0");
    if (!(rms_decay > 0.0 && rms_decay < 1.0)) throw InvalidParameterError("rmsprop decay must lie in (0, 1)");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw InvalidParameterError("adam beta1 must lie in [0, 1)");
    if (!(smoothing_sigma >= 0.0)) throw InvalidParameterError("smoothing sigma must be >= 0");
  }
};

/// One entry of the loss trace; every term is already multiplied by its weight
/// and summed over objects.
struct LossTerms {
  double total = 0.0;
  double fidelity = 0.0;
  double jacobian = 0.0;
  double laplacian = 0.0;

  friend bool operator==(const LossTerms&, const LossTerms&) = default;
};

struct SegmentationResult {
  std::vector<DisplacementField> fields;
  std::vector<SoftMask> pred_masks;
  std::vector<LossTerms> loss_trace;
  std::vector<RegularizerReport> reports;
  /// Per object: the label was empty, so its Dice is degenerate.
  std::vector<bool> degenerate_labels;
  int iterations_run = 0;

  const DisplacementField& field() const { return fields.front(); }
  const SoftMask& pred_mask() const { return pred_masks.front(); }
  const RegularizerReport& report() const { return reports.front(); }
};

/// The total loss became non-finite. Carries the last finite state.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::vector<DisplacementField> last, int iteration)
      : Error(what), last_fields_(std::move(last)), iteration_(iteration) {}

  const std::vector<DisplacementField>& last_fields() const noexcept { return last_fields_; }
  int iteration() const noexcept { return iteration_; }

 private:
  std::vector<DisplacementField> last_fields_;
  int iteration_;
};

namespace detail {

/// Separable Gaussian blur with weights renormalized at the borders, or its
/// transpose.
inline void gaussian_smooth(const GridSpec& g, std::span<double> values, double sigma, bool transpose = false) {
  if (sigma <= 0.0) return;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  for (int t = -radius; t <= radius; ++t) kernel[t + radius] = std::exp(-0.5 * t * t / (sigma * sigma));
  std::vector<double> line, out;
  for (int a = 0; a < g.rank(); ++a) {
    const std::size_t stride = g.stride(a);
    const auto len = static_cast<long>(g.extent(a));
    line.resize(len);
    out.resize(len);
    for (std::size_t n = 0; n < g.size(); ++n) {
      if (g.node_index(n)[a] != 0) continue;
      for (long i = 0; i < len; ++i) line[i] = values[n + i * stride];
      if (transpose) std::fill(out.begin(), out.end(), 0.0);
      for (long i = 0; i < len; ++i) {
        double acc = 0.0, wsum = 0.0;
        const long lo = std::max(0L, i - radius), hi = std::min(len - 1, i + radius);
        for (long j = lo; j <= hi; ++j) wsum += kernel[j - i + radius];
        for (long j = lo; j <= hi; ++j) {
          const double w = kernel[j - i + radius] / wsum;
          if (transpose) out[j] += w * line[i];
          else acc += w * line[j];
        }
        if (!transpose) out[i] = acc;
      }
      for (long i = 0; i < len; ++i) values[n + i * stride] = out[i];
    }
  }
}

/// What one object contributes to the loss: a template warped by its own
/// field, scored against a label (Dice) or against the image (Chan-Vese).
struct ObjectTerm {
  const SoftMask* templ = nullptr;
  const SoftMask* label = nullptr;  // null selects the Chan-Vese fidelity
};

struct Evaluation {
  LossTerms terms;
  /// Weighted per-term gradients, per object.
  std::vector<DisplacementField> fidelity_gradients;
  std::vector<DisplacementField> laplacian_gradients;
  std::vector<DisplacementField> jacobian_gradients;

  DisplacementField gradient(std::size_t o) const {
    return fidelity_gradients[o] + laplacian_gradients[o] + jacobian_gradients[o];
  }
};

class Objective {
 public:
  Objective(const Image& image, std::vector<ObjectTerm> objects, const LossWeights& w, const OptimizerConfig& cfg)
      : image_(&image), objects_(std::move(objects)), w_(w), cfg_(&cfg) {}

  std::size_t object_count() const noexcept { return objects_.size(); }

  Evaluation evaluate(const std::vector<DisplacementField>& fields, bool with_gradient) const {
    Evaluation e;
    for (std::size_t o = 0; o < objects_.size(); ++o) {
      const DisplacementField& v = fields[o];
      const auto map = to_deformation(v);
      const SoftMask& templ = *objects_[o].templ;
      const SoftMask pred = warp(templ, map, cfg_->sampler).output;

      const MaskLoss fid = objects_[o].label ? dice_loss(pred, *objects_[o].label)
                                             : chan_vese_loss(*image_, pred, cfg_->chan_vese);
      const LossWithGradient jac = w_.jacobian > 0.0 ? relu_jacobian_loss(map, cfg_->regularizer)
                                                     : LossWithGradient{0.0, DisplacementField(v.grid())};
      const LaplacianLoss lap = w_.laplacian > 0.0 ? laplacian_loss(v, cfg_->regularizer)
                                                   : LaplacianLoss{0.0, DisplacementField(v.grid()), false};

      e.terms.fidelity += w_.fidelity * fid.value;
      e.terms.jacobian += w_.jacobian * jac.value;
      e.terms.laplacian += w_.laplacian * lap.value;

      if (with_gradient) {
        std::vector<double> upstream = fid.gradient;
        for (double& u : upstream) u *= w_.fidelity;
        e.fidelity_gradients.push_back(grad_wrt_coords(templ, map, upstream, cfg_->sampler));
        e.laplacian_gradients.push_back(w_.laplacian * lap.gradient);
        e.jacobian_gradients.push_back(w_.jacobian * jac.gradient);
      }
    }
    e.terms.total = e.terms.fidelity + e.terms.jacobian + e.terms.laplacian;
    return e;
  }

  SoftMask prediction(std::size_t o, const DisplacementField& v) const {
    return warp(*objects_[o].templ, to_deformation(v), cfg_->sampler).output;
  }

 private:
  const Image* image_;
  std::vector<ObjectTerm> objects_;
  LossWeights w_;
  const OptimizerConfig* cfg_;
};

/// A run of consecutive iterations against one objective.
struct Phase {
  const Objective* objective;
  int iterations;
};

inline bool plateaued(const std::vector<LossTerms>& trace, std::size_t phase_start, const OptimizerConfig& cfg) {
  if (cfg.tolerance <= 0.0 || cfg.patience <= 0) return false;
  const std::size_t p = static_cast<std::size_t>(cfg.patience);
  if (trace.size() < phase_start + p + 1) return false;
  const double old = trace[trace.size() - 1 - p].total;
  const double now = trace.back().total;
  return (old - now) <= cfg.tolerance * std::max(std::abs(old), 1e-300);
}

/// First-order minimization over all object fields. Optimizer state carries
/// across phases; only the objective changes.
inline std::vector<DisplacementField> minimize(const std::vector<Phase>& phases, std::vector<DisplacementField> fields,
                                               const OptimizerConfig& cfg, std::vector<LossTerms>& trace) {
  const std::size_t q = fields.size();
  std::vector<std::vector<double>> m1(q), m2(q);
  for (std::size_t o = 0; o < q; ++o) {
    m1[o].assign(fields[o].data().size(), 0.0);
    m2[o].assign(fields[o].data().size(), 0.0);
  }
  double scale = 1.0;
  int t = 0;

  for (const Phase& phase : phases) {
    if (phase.iterations <= 0) continue;
    const Objective& obj = *phase.objective;
    Evaluation cur = obj.evaluate(fields, true);
    if (!std::isfinite(cur.terms.total)) {
      throw DivergenceError("loss is not finite at the start of a phase", fields, static_cast<int>(trace.size()));
    }
    const std::size_t phase_start = trace.size();

    for (int it = 0; it < phase.iterations; ++it) {
      ++t;
      std::vector<std::vector<double>> dir(q);
      for (std::size_t o = 0; o < q; ++o) {
        DisplacementField g = cur.fidelity_gradients[o] + cur.laplacian_gradients[o];
        for (int c = 0; c < g.rank(); ++c) {
          gaussian_smooth(g.grid(), g.component(c), cfg.smoothing_sigma, false);
          gaussian_smooth(g.grid(), g.component(c), cfg.smoothing_sigma, true);
        }
        g += cur.jacobian_gradients[o];
        const auto gd = g.data();
        dir[o].resize(gd.size());
        switch (cfg.method) {
          case Method::gradient_descent:
            std::copy(gd.begin(), gd.end(), dir[o].begin());
            break;
          case Method::rmsprop: {
            const double corr = 1.0 - std::pow(cfg.rms_decay, t);
            if (cfg.global_rms) {
              double ms = 0.0;
              for (double x : gd) ms += x * x;
              ms /= static_cast<double>(gd.size());
              m2[o][0] = cfg.rms_decay * m2[o][0] + (1.0 - cfg.rms_decay) * ms;
              const double den = std::sqrt(m2[o][0] / corr) + cfg.epsilon;
              for (std::size_t i = 0; i < gd.size(); ++i) dir[o][i] = gd[i] / den;
              break;
            }
            for (std::size_t i = 0; i < gd.size(); ++i) {
              m2[o][i] = cfg.rms_decay * m2[o][i] + (1.0 - cfg.rms_decay) * gd[i] * gd[i];
              dir[o][i] = gd[i] / (std::sqrt(m2[o][i] / corr) + cfg.epsilon);
            }
            break;
          }
          case Method::adam: {
            const double c1 = 1.0 - std::pow(cfg.adam_beta1, t);
            const double c2 = 1.0 - std::pow(cfg.rms_decay, t);
            for (std::size_t i = 0; i < gd.size(); ++i) {
              m1[o][i] = cfg.adam_beta1 * m1[o][i] + (1.0 - cfg.adam_beta1) * gd[i];
              m2[o][i] = cfg.rms_decay * m2[o][i] + (1.0 - cfg.rms_decay) * gd[i] * gd[i];
              dir[o][i] = (m1[o][i] / c1) / (std::sqrt(m2[o][i] / c2) + cfg.epsilon);
            }
            break;
          }
        }
      }

      const int tries = cfg.step_halving ? cfg.max_halvings + 1 : 1;
      for (int k = 0; k < tries; ++k) {
        std::vector<DisplacementField> cand = fields;
        const double step = cfg.step_size * scale;
        for (std::size_t o = 0; o < q; ++o) {
          auto cd = cand[o].data();
          for (std::size_t i = 0; i < cd.size(); ++i) cd[i] -= step * dir[o][i];
        }
        bool finite = true;
        for (const auto& f : cand) {
          for (double x : f.data()) finite = finite && std::isfinite(x);
        }
        Evaluation e = finite ? obj.evaluate(cand, true) : Evaluation{};
        finite = finite && std::isfinite(e.terms.total);
        if (!cfg.step_halving) {
          if (!finite) throw DivergenceError("loss diverged", fields, static_cast<int>(trace.size()));
          fields = std::move(cand);
          cur = std::move(e);
          break;
        }
        const bool new_folds = cfg.keep_fold_free && cur.terms.jacobian == 0.0 && e.terms.jacobian > 0.0;
        if (finite && e.terms.total <= cur.terms.total && !new_folds) {
          fields = std::move(cand);
          cur = std::move(e);
          scale = std::min(1.0, 2.0 * scale);
          break;
        }
        scale *= 0.5;
      }
      trace.push_back(cur.terms);
      if (plateaued(trace, phase_start, cfg)) break;
    }
  }
  return fields;
}

inline SegmentationResult finish(const Objective& obj, std::vector<DisplacementField> fields,
                                 std::vector<LossTerms> trace, const std::vector<const SoftMask*>& labels,
                                 const OptimizerConfig& cfg) {
  SegmentationResult r;
  r.iterations_run = static_cast<int>(trace.size());
  r.loss_trace = std::move(trace);
  for (std::size_t o = 0; o < fields.size(); ++o) {
    r.pred_masks.push_back(obj.prediction(o, fields[o]));
    r.reports.push_back(regularizer_report(fields[o], cfg.regularizer));
    r.degenerate_labels.push_back(labels.size() > o && labels[o] && labels[o]->mass() == 0.0);
  }
  r.fields = std::move(fields);
  return r;
}

inline void check_inputs(const Image& img, const std::vector<const SoftMask*>& masks, const LossWeights& w,
                         const OptimizerConfig& cfg) {
  w.validate();
  cfg.validate();
  for (const SoftMask* m : masks) require_same_grid(img.grid(), m->grid(), "segment");
}

}  // namespace detail

/// Optimizes q independent fields against the sum of per-object losses
/// (Dice against each label). Templates and labels must pair up.
inline SegmentationResult segment_multi_object(const Image& img, const MultiObjectSet& objs,
                                               const std::vector<SoftMask>& labels, const LossWeights& w,
                                               const OptimizerConfig& cfg) {
  if (labels.size() != objs.count()) {
    throw ShapeMismatchError("multi-object segmentation got " + std::to_string(objs.count()) + " templates but " +
                             std::to_string(labels.size()) + " labels");
  }
  std::vector<const SoftMask*> masks;
  std::vector<detail::ObjectTerm> terms;
  for (std::size_t o = 0; o < objs.count(); ++o) {
    masks.push_back(&objs.templates[o]);
    masks.push_back(&labels[o]);
    terms.push_back({&objs.templates[o], &labels[o]});
  }
  detail::check_inputs(img, masks, w, cfg);
  for (const auto& f : objs.fields) require_same_grid(img.grid(), f.grid(), "segment");

  const detail::Objective obj(img, std::move(terms), w, cfg);
  std::vector<LossTerms> trace;
  auto fields = detail::minimize({{&obj, cfg.iterations}}, objs.fields, cfg, trace);
  std::vector<const SoftMask*> label_ptrs;
  for (const auto& l : labels) label_ptrs.push_back(&l);
  return detail::finish(obj, std::move(fields), std::move(trace), label_ptrs, cfg);
}

/// Warps `templ` onto `label` minimizing weighted Dice + ReLU Jacobian + Laplacian,
/// starting from the zero field.
inline SegmentationResult segment_supervised(const Image& img, const SoftMask& templ, const SoftMask& label,
                                             const LossWeights& w, const OptimizerConfig& cfg) {
  return segment_multi_object(img, MultiObjectSet({templ}), {label}, w, cfg);
}

/// Chan-Vese fidelity instead of Dice; the region means are refreshed at every
/// loss evaluation.
inline SegmentationResult segment_unsupervised(const Image& img, const SoftMask& templ, const LossWeights& w,
                                               const OptimizerConfig& cfg) {
  detail::check_inputs(img, {&templ}, w, cfg);
  const detail::Objective obj(img, {{&templ, nullptr}}, w, cfg);
  std::vector<LossTerms> trace;
  auto fields = detail::minimize({{&obj, cfg.iterations}}, {DisplacementField(img.grid())}, cfg, trace);
  return detail::finish(obj, std::move(fields), std::move(trace), {}, cfg);
}

/// Fill-first, dig-second schedule for targets with holes.
struct FfdsSchedule {
  double phase1_fraction = 1.0 / 3.0;
  SoftMask filled_template;
  SoftMask holed_template;
  SoftMask filled_label;
  SoftMask holed_label;

  void validate() const {
    if (!(phase1_fraction >= 0.0 && phase1_fraction < 1.0)) {
      throw InvalidParameterError("phase1_fraction must lie in [0, 1)");
    }
    auto check = [](const SoftMask& holed, const SoftMask& filled, const char* what) {
      require_same_grid(holed.grid(), filled.grid(), what);
      for (std::size_t n = 0; n < holed.size(); ++n) {
        if (holed[n] > filled[n]) throw InvalidParameterError(std::string(what) + ": holed mask exceeds filled mask");
      }
    };
    check(holed_template, filled_template, "FFDS templates");
    check(holed_label, filled_label, "FFDS labels");
  }
};

/// Phase 1 fits the filled template to the filled label; phase 2 swaps in the
/// holed pair and continues from the phase-1 field and optimizer state.
inline SegmentationResult segment_ffds(const Image& img, const FfdsSchedule& sched, const LossWeights& w,
                                       const OptimizerConfig& cfg) {
  sched.validate();
  detail::check_inputs(img, {&sched.filled_template, &sched.filled_label}, w, cfg);
  const detail::Objective fill(img, {{&sched.filled_template, &sched.filled_label}}, w, cfg);
  const detail::Objective dig(img, {{&sched.holed_template, &sched.holed_label}}, w, cfg);
  const int n1 = static_cast<int>(std::lround(sched.phase1_fraction * cfg.iterations));
  std::vector<LossTerms> trace;
  auto fields =
      detail::minimize({{&fill, n1}, {&dig, cfg.iterations - n1}}, {DisplacementField(img.grid())}, cfg, trace);
  return detail::finish(dig, std::move(fields), std::move(trace), {&sched.holed_label}, cfg);
}

}  // namespace tpsn
