#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "tpsn/tpsn.hpp"

using namespace tpsn;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("tpsn_run_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult cli(const std::string& args, const fs::path& dir) {
  const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = std::string(TPSN_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

}  // namespace

TEST(RunConfig, ParsesKeysAndResolvesPaths) {
  const auto cfg = parse_run_config(
      "# comment\n"
      "mode = ffds\n"
      "image = img.tpwv   # trailing comment\n"
      "template_spec = annulus:r=0.6,inner=0.3\n"
      "label = lab.tpwv\n"
      "filled_template_spec = disk:r=0.6\n"
      "filled_label = filled.tpwv\n"
      "lambda_jac = 10\n"
      "iterations = 123\n"
      "method = adam\n"
      "jacobian_scheme = all-corners\n"
      "phase1_fraction = 0.25\n",
      "/data/case1");
  EXPECT_EQ(cfg.mode, RunMode::ffds);
  EXPECT_EQ(cfg.image, "/data/case1/img.tpwv");
  EXPECT_EQ(cfg.labels.at(0), "/data/case1/lab.tpwv");
  ASSERT_TRUE(cfg.templates.at(0).shape);
  EXPECT_EQ(cfg.templates[0].shape->kind, ShapeKind::annulus);
  EXPECT_EQ(cfg.weights.jacobian, 10.0);
  EXPECT_EQ(cfg.optimizer.iterations, 123);
  EXPECT_EQ(cfg.optimizer.method, Method::adam);
  EXPECT_EQ(cfg.optimizer.regularizer.scheme, JacobianScheme::all_corners);
  EXPECT_EQ(cfg.phase1_fraction, 0.25);
}

TEST(RunConfig, Errors) {
  auto offset_of = [](const std::string& text) -> std::size_t {
    try {
      parse_run_config(text);
    } catch (const ParseError& e) {
      return e.offset();
    }
    return std::string::npos;
  };
  EXPECT_EQ(offset_of("image = a\ntemplate = b\nlabel = c\nbogus = 1\n"), 33u);
  EXPECT_EQ(offset_of("image = a\nimage = b\n"), 10u);
  EXPECT_EQ(offset_of("image = a\nno equals here\n"), 10u);
  EXPECT_EQ(offset_of("image = a\ntemplate = b\nlabel = c\niterations = ten\n"), 33u);
  EXPECT_EQ(offset_of("template = b\nlabel = c\n"), 0u);
  EXPECT_EQ(offset_of("mode = unsupervised\nimage = a\ntemplate = b\nlabel = c\n"), 0u);
  EXPECT_EQ(offset_of("mode = ffds\nimage = a\ntemplate = b\nlabel = c\n"), 0u);
}

TEST(RunConfig, LossTraceCsv) {
  const std::string csv = loss_trace_csv({{1.5, 1.0, 0.25, 0.25}});
  EXPECT_EQ(csv, "iteration,total,fidelity,jacobian,laplacian\n0,1.5,1,0.25,0.25\n");
}

TEST(RunSegmentation, SupervisedWritesOutputs) {
  const auto dir = scratch_dir("supervised");
  const GridSpec g{24, 24};
  const SoftMask label = rasterize(ShapeSpec::disk(0.5, 0.1, 0.0), g);
  save_mask((dir / "label.tpwv").string(), label);
  save_image((dir / "image.tpwv").string(), label.as_image());
  std::ofstream(dir / "disk.cfg") << "image = image.tpwv\nlabel = label.tpwv\ntemplate_spec = disk:r=0.4\n"
                                     "iterations = 60\noutput_dir = out\n";
  const auto out = run_segmentation(load_run_config((dir / "disk.cfg").string()));
  ASSERT_EQ(out.metric_rows.size(), 1u);
  EXPECT_EQ(out.metric_rows[0].rfind("disk,", 0), 0u);
  for (const char* f : {"pred.tpwv", "field.tpwv", "metrics.csv", "loss_trace.csv", "overlay.ppm"}) {
    EXPECT_TRUE(fs::exists(dir / "out" / f)) << f;
  }
  const auto field = volume_to_field(read_volume((dir / "out" / "field.tpwv").string()), g);
  EXPECT_GT(field.norm(), 0.0);
  EXPECT_EQ(slurp(dir / "out" / "metrics.csv").rfind(kMetricCsvHeader, 0), 0u);
}

TEST(Cli, TemplateThenMetrics) {
  const auto dir = scratch_dir("cli_template");
  const auto a = (dir / "a.tpwv").string(), b = (dir / "b.pgm").string();
  ASSERT_EQ(cli("template --spec disk:r=0.5 --dims 32x32 --out " + a, dir).code, 0);
  ASSERT_EQ(cli("template --spec disk:r=0.5 --dims 32x32 --out " + b, dir).code, 0);
  const auto r = cli("metrics --header --pred " + a + " --ref " + b, dir);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, std::string(kMetricCsvHeader) + "\na,1,0,1,0,0,\n");
}

TEST(Cli, ErrorExitCodes) {
  const auto dir = scratch_dir("cli_errors");
  auto r = cli("segment --bogus", dir);
  EXPECT_EQ(r.code, 64);
  r = cli("", dir);
  EXPECT_EQ(r.code, 64);
  r = cli("metrics --pred /nonexistent/a.tpwv --ref /nonexistent/b.tpwv", dir);
  EXPECT_EQ(r.code, 3);
  EXPECT_EQ(r.err.rfind("error: io: ", 0), 0u) << r.err;
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
  r = cli("template --spec blob:r=1 --dims 8x8 --out " + (dir / "x.tpwv").string(), dir);
  EXPECT_EQ(r.code, 64);
  std::ofstream(dir / "bad.cfg") << "image = nowhere.tpwv\ntemplate_spec = disk:r=0.4\nlabel = none.tpwv\n";
  r = cli("segment --config " + (dir / "bad.cfg").string(), dir);
  EXPECT_EQ(r.code, 3);
  std::ofstream(dir / "garbled.cfg") << "this is not a config\n";
  r = cli("segment --config " + (dir / "garbled.cfg").string(), dir);
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("offset 0"), std::string::npos) << r.err;
}

TEST(Cli, SynthThenSegment) {
  const auto dir = scratch_dir("cli_synth");
  const auto c = dir / "case";
  ASSERT_EQ(cli("synth --case disk --dims 24x24 --seed 3 --out-dir " + c.string(), dir).code, 0);
  std::ofstream(c / "segment.cfg", std::ios::app) << "iterations = 40\n";
  const auto r = cli("segment --jobs 2 --config " + (c / "segment.cfg").string(), dir);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("segment,", 0), 0u) << r.out;
  EXPECT_TRUE(fs::exists(c / "out" / "overlay.ppm"));
}

TEST(Cli, Gradcheck) {
  const auto dir = scratch_dir("cli_gradcheck");
  const auto r = cli("gradcheck --seed 7", dir);
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_EQ(r.out.rfind("loss,instances,rejected,max_rel_error\n", 0), 0u);
}
