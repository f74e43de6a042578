#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "tpsn/core.hpp"
#include "tpsn/engine.hpp"
#include "tpsn/io.hpp"
#include "tpsn/metrics.hpp"
#include "tpsn/pyramid.hpp"
#include "tpsn/templates.hpp"

namespace tpsn {

enum class RunMode { supervised, unsupervised, ffds, multi, multilevel };

/// Where a template comes from: a mask file or a parametric shape.
struct TemplateSource {
  std::string path;
  std::optional<ShapeSpec> shape;

  SoftMask load(const GridSpec& g) const { return shape ? rasterize(*shape, g) : load_mask(path); }
};

/// Everything `tpsn segment` needs. Paths are already resolved.
struct RunConfig {
  RunMode mode = RunMode::supervised;
  std::string case_name = "case";
  std::string image;
  /// Single-object modes use the first entry; multi mode uses all of them.
  std::vector<TemplateSource> templates;
  std::vector<std::string> labels;
  std::optional<TemplateSource> filled_template;
  std::string filled_label;
  /// Ground truth for metrics when the run itself is unsupervised.
  std::string reference;
  LossWeights weights;
  OptimizerConfig optimizer;
  PyramidConfig pyramid;
  double phase1_fraction = 1.0 / 3.0;
  std::uint64_t seed = 0;
  std::string output_dir = ".";
  bool pgm_output = false;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  while (true) {
    const auto p = s.find(sep);
    const auto item = trim(s.substr(0, p));
    if (!item.empty()) out.emplace_back(item);
    if (p == std::string_view::npos) break;
    s = s.substr(p + 1);
  }
  return out;
}

}  // namespace detail

/// Parses the flat `key = value` format (`#` starts a comment). Relative
/// paths resolve against `base_dir`.
inline RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir = ".") {
  RunConfig cfg;
  std::map<std::string, std::pair<std::string, std::size_t>> kv;
  std::size_t offset = 0;
  while (offset <= text.size()) {
    auto nl = text.find('\n', offset);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(offset, nl - offset);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (!line.empty()) {
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw ParseError("config line lacks '='", offset);
      const std::string key(detail::trim(line.substr(0, eq)));
      const std::string val(detail::trim(line.substr(eq + 1)));
      if (key.empty()) throw ParseError("config line has an empty key", offset);
      if (kv.count(key)) throw ParseError("duplicate config key '" + key + "'", offset);
      kv[key] = {val, offset};
    }
    offset = nl + 1;
  }

  auto fail = [&](const std::string& key, const std::string& why) -> ParseError {
    return ParseError("config key '" + key + "': " + why, kv.at(key).second);
  };
  auto path = [&](const std::string& p) { return (base_dir / p).lexically_normal().string(); };
  auto real = [&](const std::string& key) {
    const std::string& s = kv.at(key).first;
    double v = 0.0;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size()) throw fail(key, "expected a number, got '" + s + "'");
    return v;
  };
  auto integer = [&](const std::string& key) {
    const std::string& s = kv.at(key).first;
    long long v = 0;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size()) throw fail(key, "expected an integer, got '" + s + "'");
    return v;
  };
  auto boolean = [&](const std::string& key) {
    const std::string& s = kv.at(key).first;
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw fail(key, "expected true/false, got '" + s + "'");
  };
  auto shape = [&](const std::string& key, const std::string& s) {
    try {
      return parse_shape_spec(s);
    } catch (const Error& e) {
      throw fail(key, e.what());
    }
  };

  for (const auto& [key, entry] : kv) {
    const std::string& val = entry.first;
    if (key == "mode") {
      if (val == "supervised") cfg.mode = RunMode::supervised;
      else if (val == "unsupervised") cfg.mode = RunMode::unsupervised;
      else if (val == "ffds") cfg.mode = RunMode::ffds;
      else if (val == "multi") cfg.mode = RunMode::multi;
      else if (val == "multilevel") cfg.mode = RunMode::multilevel;
      else throw fail(key, "unknown mode '" + val + "'");
    } else if (key == "case") {
      cfg.case_name = val;
    } else if (key == "image") {
      cfg.image = path(val);
    } else if (key == "template" || key == "templates") {
      for (const auto& p : detail::split(val, ',')) cfg.templates.push_back({path(p), std::nullopt});
    } else if (key == "template_spec" || key == "template_specs") {
      for (const auto& s : detail::split(val, ';')) cfg.templates.push_back({"", shape(key, s)});
    } else if (key == "label" || key == "labels") {
      for (const auto& p : detail::split(val, ',')) cfg.labels.push_back(path(p));
    } else if (key == "filled_template") {
      cfg.filled_template = TemplateSource{path(val), std::nullopt};
    } else if (key == "filled_template_spec") {
      cfg.filled_template = TemplateSource{"", shape(key, val)};
    } else if (key == "filled_label") {
      cfg.filled_label = path(val);
    } else if (key == "reference") {
      cfg.reference = path(val);
    } else if (key == "lambda_fid") {
      cfg.weights.fidelity = real(key);
    } else if (key == "lambda_jac") {
      cfg.weights.jacobian = real(key);
    } else if (key == "lambda_lap") {
      cfg.weights.laplacian = real(key);
    } else if (key == "method") {
      if (val == "rmsprop") cfg.optimizer.method = Method::rmsprop;
      else if (val == "adam") cfg.optimizer.method = Method::adam;
      else if (val == "gradient-descent") cfg.optimizer.method = Method::gradient_descent;
      else throw fail(key, "unknown method '" + val + "'");
    } else if (key == "step_size") {
      cfg.optimizer.step_size = real(key);
    } else if (key == "iterations") {
      cfg.optimizer.iterations = static_cast<int>(integer(key));
    } else if (key == "rms_decay") {
      cfg.optimizer.rms_decay = real(key);
    } else if (key == "adam_beta1") {
      cfg.optimizer.adam_beta1 = real(key);
    } else if (key == "epsilon") {
      cfg.optimizer.epsilon = real(key);
    } else if (key == "tolerance") {
      cfg.optimizer.tolerance = real(key);
    } else if (key == "patience") {
      cfg.optimizer.patience = static_cast<int>(integer(key));
    } else if (key == "step_halving") {
      cfg.optimizer.step_halving = boolean(key);
    } else if (key == "keep_fold_free") {
      cfg.optimizer.keep_fold_free = boolean(key);
    } else if (key == "max_halvings") {
      cfg.optimizer.max_halvings = static_cast<int>(integer(key));
    } else if (key == "smoothing_sigma") {
      cfg.optimizer.smoothing_sigma = real(key);
    } else if (key == "global_rms") {
      cfg.optimizer.global_rms = boolean(key);
    } else if (key == "out_of_bounds") {
      if (val == "clamp") cfg.optimizer.sampler.out_of_bounds = OutOfBounds::clamp;
      else if (val == "zero") cfg.optimizer.sampler.out_of_bounds = OutOfBounds::zero;
      else throw fail(key, "expected clamp or zero");
    } else if (key == "jacobian_scheme") {
      if (val == "forward") cfg.optimizer.regularizer.scheme = JacobianScheme::forward;
      else if (val == "all-corners") cfg.optimizer.regularizer.scheme = JacobianScheme::all_corners;
      else throw fail(key, "expected forward or all-corners");
    } else if (key == "jacobian_reduction" || key == "laplacian_reduction") {
      Reduction r = Reduction::mean;
      if (val == "sum") r = Reduction::sum;
      else if (val != "mean") throw fail(key, "expected mean or sum");
      (key == "jacobian_reduction" ? cfg.optimizer.regularizer.jacobian_reduction
                                   : cfg.optimizer.regularizer.laplacian_reduction) = r;
    } else if (key == "differentiate_means") {
      cfg.optimizer.chan_vese.differentiate_means = boolean(key);
    } else if (key == "levels") {
      cfg.pyramid.levels = static_cast<int>(integer(key));
    } else if (key == "binarize_between_levels") {
      cfg.pyramid.binarize_between_levels = boolean(key);
    } else if (key == "phase1_fraction") {
      cfg.phase1_fraction = real(key);
    } else if (key == "seed") {
      const long long s = integer(key);
      if (s < 0) throw fail(key, "must be >= 0");
      cfg.seed = static_cast<std::uint64_t>(s);
    } else if (key == "output_dir") {
      cfg.output_dir = path(val);
    } else if (key == "output_format") {
      if (val == "pgm") cfg.pgm_output = true;
      else if (val != "tpwv") throw fail(key, "expected tpwv or pgm");
    } else {
      throw fail(key, "unknown key");
    }
  }

  auto require = [&](bool ok, const std::string& what) {
    if (!ok) throw ParseError("config: " + what, 0);
  };
  require(!cfg.image.empty(), "'image' is required");
  require(!cfg.templates.empty(), "a template or template_spec is required");
  switch (cfg.mode) {
    case RunMode::supervised:
    case RunMode::ffds:
      require(cfg.templates.size() == 1 && cfg.labels.size() == 1, "this mode needs exactly one template and label");
      if (cfg.mode == RunMode::ffds) {
        require(cfg.filled_template.has_value() && !cfg.filled_label.empty(),
                "ffds needs filled_template (or filled_template_spec) and filled_label");
      }
      break;
    case RunMode::unsupervised:
      require(cfg.templates.size() == 1 && cfg.labels.empty(), "unsupervised mode takes one template and no label");
      break;
    case RunMode::multilevel:
      require(cfg.templates.size() == 1 && cfg.labels.size() <= 1, "multilevel takes one template and at most one label");
      break;
    case RunMode::multi:
      require(cfg.templates.size() == cfg.labels.size(), "multi mode needs as many labels as templates");
      break;
  }
  return cfg;
}

inline RunConfig load_run_config(const std::string& file) {
  std::ifstream f(file, std::ios::binary);
  if (!f) throw IoError("cannot open config '" + file + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  const std::filesystem::path p(file);
  try {
    RunConfig cfg = parse_run_config(ss.str(), p.parent_path().empty() ? "." : p.parent_path());
    if (cfg.case_name == "case") cfg.case_name = p.stem().string();
    return cfg;
  } catch (const ParseError& e) {
    throw ParseError(file + ": " + e.what(), e.offset());
  }
}

inline std::string loss_trace_csv(const std::vector<LossTerms>& trace) {
  std::string out = "iteration,total,fidelity,jacobian,laplacian\n";
  char buf[160];
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const auto& t = trace[i];
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g\n", i, t.total, t.fidelity, t.jacobian, t.laplacian);
    out += buf;
  }
  return out;
}

/// What a run produced, with the file names written under output_dir.
struct RunOutput {
  SegmentationResult result;
  std::vector<std::string> metric_rows;
  std::vector<std::string> files;
};

/// Executes a parsed config and writes pred / field / metrics / trace /
/// overlay files into `cfg.output_dir`.
inline RunOutput run_segmentation(const RunConfig& cfg) {
  const Image img = load_image(cfg.image);
  const GridSpec& g = img.grid();
  std::vector<SoftMask> templates, labels;
  for (const auto& t : cfg.templates) templates.push_back(t.load(g));
  for (const auto& l : cfg.labels) labels.push_back(load_mask(l));

  RunOutput out;
  switch (cfg.mode) {
    case RunMode::supervised:
      out.result = segment_supervised(img, templates[0], labels[0], cfg.weights, cfg.optimizer);
      break;
    case RunMode::unsupervised:
      out.result = segment_unsupervised(img, templates[0], cfg.weights, cfg.optimizer);
      break;
    case RunMode::multi:
      out.result = segment_multi_object(img, MultiObjectSet(templates), labels, cfg.weights, cfg.optimizer);
      break;
    case RunMode::multilevel:
      out.result = segment_multilevel(img, templates[0], labels.empty() ? nullptr : &labels[0], cfg.weights,
                                      cfg.pyramid, cfg.optimizer);
      break;
    case RunMode::ffds: {
      FfdsSchedule s{cfg.phase1_fraction, cfg.filled_template->load(g), templates[0], load_mask(cfg.filled_label),
                     labels[0]};
      out.result = segment_ffds(img, s, cfg.weights, cfg.optimizer);
      break;
    }
  }

  std::filesystem::create_directories(cfg.output_dir);
  const std::filesystem::path dir(cfg.output_dir);
  auto emit = [&](const std::string& name, const std::string& bytes) {
    detail::write_all((dir / name).string(), bytes);
    out.files.push_back(name);
  };
  const std::size_t q = out.result.fields.size();
  std::vector<SoftMask> refs = labels;
  if (refs.empty() && !cfg.reference.empty()) refs.push_back(load_mask(cfg.reference));

  std::string metrics = std::string(kMetricCsvHeader) + "\n";
  for (std::size_t o = 0; o < q; ++o) {
    const std::string suffix = q > 1 ? "_" + std::to_string(o) : "";
    const SoftMask& pred = out.result.pred_masks[o];
    if (cfg.pgm_output && g.rank() == 2) {
      emit("pred" + suffix + ".pgm", encode_pgm(g, pred.values()));
    } else {
      emit("pred" + suffix + ".tpwv", encode_volume(to_volume(g, pred.values())));
    }
    emit("field" + suffix + ".tpwv", encode_volume(field_to_volume(out.result.fields[o])));
    if (o < refs.size()) {
      const auto map = to_deformation(out.result.fields[o]);
      const std::string row = metric_csv_row(cfg.case_name + suffix, evaluate(pred, refs[o], &map));
      out.metric_rows.push_back(row);
      metrics += row + "\n";
    }
  }
  emit("metrics.csv", metrics);
  emit("loss_trace.csv", loss_trace_csv(out.result.loss_trace));
  const SoftMask* ref = refs.empty() ? nullptr : &refs[0];
  emit("overlay.ppm", encode_overlay(img, &templates[0], &out.result.pred_masks[0], ref));
  return out;
}

}  // namespace tpsn
