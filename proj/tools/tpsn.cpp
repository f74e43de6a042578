// tpsn command-line front end.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "tpsn/tpsn.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitDiverged = 2;
constexpr int kExitIo = 3;
constexpr int kExitUsage = 64;
constexpr int kExitFailed = 1;

std::mutex g_log;

void report(const std::string& kind, const std::string& msg) {
  std::string line = msg;
  std::replace(line.begin(), line.end(), '\n', ' ');
  std::lock_guard lock(g_log);
  std::cerr << "error: " << kind << ": " << line << '\n';
}

std::vector<std::size_t> parse_dims(const std::string& s) {
  std::vector<std::size_t> dims;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, 'x')) {
    std::size_t used = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(part, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != part.size() || part.empty()) throw tpsn::InvalidParameterError("bad --dims '" + s + "'");
    dims.push_back(v);
  }
  return dims;
}

int run_one(const std::string& config) {
  try {
    const tpsn::RunConfig cfg = tpsn::load_run_config(config);
    const tpsn::RunOutput out = tpsn::run_segmentation(cfg);
    std::lock_guard lock(g_log);
    for (const auto& row : out.metric_rows) std::cout << row << '\n';
    return kExitOk;
  } catch (const tpsn::DivergenceError& e) {
    report("diverged", config + ": " + e.what());
    return kExitDiverged;
  } catch (const tpsn::Error& e) {
    report("io", config + ": " + e.what());
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    report("io", config + ": " + e.what());
    return kExitIo;
  }
}

int cmd_segment(const std::vector<std::string>& configs, int jobs) {
  std::vector<int> codes(configs.size(), 0);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < configs.size(); i = next++) codes[i] = run_one(configs[i]);
  };
  const int n = std::max(1, std::min<int>(jobs, static_cast<int>(configs.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return *std::max_element(codes.begin(), codes.end());
}

int cmd_metrics(const std::string& pred_path, const std::string& ref_path, const std::string& map_path, bool header) {
  const tpsn::SoftMask pred = tpsn::load_mask(pred_path);
  const tpsn::SoftMask ref = tpsn::load_mask(ref_path);
  std::optional<tpsn::DisplacementField> field;
  if (!map_path.empty()) field = tpsn::volume_to_field(tpsn::read_volume(map_path), pred.grid());
  const std::optional<tpsn::DeformationMap> map =
      field ? std::optional<tpsn::DeformationMap>(tpsn::to_deformation(*field)) : std::nullopt;
  const tpsn::MetricRow row = tpsn::evaluate(pred, ref, map ? &*map : nullptr);
  if (header) std::cout << tpsn::kMetricCsvHeader << '\n';
  std::cout << tpsn::metric_csv_row(std::filesystem::path(pred_path).stem().string(), row) << '\n';
  return kExitOk;
}

int cmd_template(std::string spec, const std::string& dims, const std::string& out) {
  if (std::filesystem::is_regular_file(spec)) {
    std::ifstream f(spec);
    std::getline(f, spec);
    while (!spec.empty() && std::isspace(static_cast<unsigned char>(spec.back()))) spec.pop_back();
  }
  const tpsn::GridSpec g(parse_dims(dims));
  tpsn::save_mask(out, tpsn::rasterize(tpsn::parse_shape_spec(spec), g));
  return kExitOk;
}

std::string synth_config(tpsn::SynthKind kind) {
  std::string c = "# written by tpsn synth\nimage = image.tpwv\noutput_dir = out\n";
  switch (kind) {
    case tpsn::SynthKind::disk:
    case tpsn::SynthKind::bean:
      return c + "mode = supervised\ntemplate = template.tpwv\nlabel = label.tpwv\n";
    case tpsn::SynthKind::annulus:
      return c +
             "mode = ffds\ntemplate = template.tpwv\nlabel = label.tpwv\nfilled_template = filled_template.tpwv\n"
             "filled_label = filled_label.tpwv\n";
    case tpsn::SynthKind::two_organs:
      return c + "mode = multi\ntemplates = template_0.tpwv, template_1.tpwv\nlabels = label_0.tpwv, label_1.tpwv\n";
  }
  return c;
}

int cmd_synth(const std::string& kind_name, const std::string& dims, std::uint64_t seed, double noise,
              const std::string& out_dir) {
  tpsn::SynthOptions opt;
  opt.kind = tpsn::parse_synth_kind(kind_name);
  opt.dims = parse_dims(dims);
  opt.seed = seed;
  opt.noise = noise;
  const tpsn::SyntheticCase c = tpsn::make_synthetic(opt);
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path dir(out_dir);
  auto mask = [&](const std::string& name, const tpsn::SoftMask& m) {
    tpsn::write_volume((dir / name).string(), tpsn::to_volume(m.grid(), m.values()));
  };
  tpsn::write_volume((dir / "image.tpwv").string(), tpsn::to_volume(c.image.grid(), c.image.values()));
  mask("label.tpwv", c.label);
  mask("template.tpwv", c.template_mask);
  if (c.filled_label) mask("filled_label.tpwv", *c.filled_label);
  if (c.filled_template) mask("filled_template.tpwv", *c.filled_template);
  for (std::size_t o = 0; o < c.labels.size(); ++o) mask("label_" + std::to_string(o) + ".tpwv", c.labels[o]);
  for (std::size_t o = 0; o < c.templates.size(); ++o) {
    mask("template_" + std::to_string(o) + ".tpwv", c.templates[o]);
  }
  std::ofstream((dir / "segment.cfg").string()) << synth_config(opt.kind);
  return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed) {
  const tpsn::GradCheckReport r = tpsn::run_gradcheck(seed);
  std::printf("loss,instances,rejected,max_rel_error\n");
  for (const auto& e : r.entries) {
    std::printf("%s,%d,%d,%.3e\n", e.loss.c_str(), e.instances, e.rejected, e.max_rel_error);
  }
  return r.passed() ? kExitOk : kExitFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Topology-preserving segmentation by template warping"};
  app.require_subcommand(1);

  auto* seg = app.add_subcommand("segment", "run one or more segmentation configs");
  std::vector<std::string> configs;
  int jobs = 1;
  seg->add_option("--config", configs, "key=value config file (repeatable)")->required()->check(CLI::ExistingFile);
  seg->add_option("--jobs", jobs, "configs processed concurrently")->check(CLI::PositiveNumber);

  auto* met = app.add_subcommand("metrics", "print a metrics CSV row for a prediction");
  std::string pred, ref, map;
  bool header = false;
  met->add_option("--pred", pred)->required();
  met->add_option("--ref", ref)->required();
  met->add_option("--map", map, "displacement field volume, adds relu_jacobian");
  met->add_flag("--header", header, "print the CSV header first");

  auto* tpl = app.add_subcommand("template", "rasterize a parametric template");
  std::string spec, dims = "64x64", out;
  tpl->add_option("--spec", spec, "e.g. disk:r=0.5, or a file holding one")->required();
  tpl->add_option("--dims", dims, "extents in axis order, e.g. 64x64 or 32x32x32");
  tpl->add_option("--out", out, ".tpwv or .pgm")->required();

  auto* syn = app.add_subcommand("synth", "write a seeded synthetic case and a matching config");
  std::string kind = "disk", out_dir = ".";
  std::uint64_t seed = 0;
  double noise = 0.02;
  syn->add_option("--case", kind)->check(CLI::IsMember({"disk", "annulus", "bean", "two-organs"}));
  syn->add_option("--dims", dims);
  syn->add_option("--seed", seed);
  syn->add_option("--noise", noise, "additive Gaussian noise sigma")->check(CLI::NonNegativeNumber);
  syn->add_option("--out-dir", out_dir);

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every analytic gradient");
  gc->add_option("--seed", seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*seg) return cmd_segment(configs, jobs);
    if (*met) return cmd_metrics(pred, ref, map, header);
    if (*tpl) return cmd_template(spec, dims, out);
    if (*syn) return cmd_synth(kind, dims, seed, noise, out_dir);
    if (*gc) return cmd_gradcheck(seed);
  } catch (const tpsn::UndefinedMetricError& e) {
    report("undefined-metric", e.what());
    return kExitFailed;
  } catch (const tpsn::InvalidParameterError& e) {
    report("usage", e.what());
    return kExitUsage;
  } catch (const tpsn::Error& e) {
    report("io", e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    report("io", e.what());
    return kExitIo;
  }
  return kExitUsage;
}
