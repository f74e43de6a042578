// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
//   tpsn_acceptance            run all criteria
//   tpsn_acceptance 3 6        run a subset

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "oracles.hpp"
#include "tpsn/tpsn.hpp"

using namespace tpsn;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

const LossWeights kPaperWeights{1.0, 1.0, 0.01};

SyntheticCase synth(SynthKind kind, std::uint64_t seed, std::vector<std::size_t> dims, double noise = 0.02) {
  SynthOptions o;
  o.kind = kind;
  o.seed = seed;
  o.dims = std::move(dims);
  o.noise = noise;
  return make_synthetic(o);
}

int b0_of(const SoftMask& m) { return betti(binarize(m)).b0; }

// 1. every analytic gradient against central differences
Verdict gradient_suite() {
  const auto t0 = Clock::now();
  const GradCheckReport r = run_gradcheck(7);
  const double dt = seconds_since(t0);
  double worst = 0.0;
  int fewest = 1 << 30;
  std::string per;
  for (const auto& e : r.entries) {
    worst = std::max(worst, e.max_rel_error);
    fewest = std::min(fewest, e.instances);
    per += fmt(" %s=%.1e", e.loss.c_str(), e.max_rel_error);
  }
  const bool ok = r.passed(1e-5) && fewest >= 50 && dt < 60.0;
  return {ok, fmt("max rel err %.2e, min instances %d, %.1fs;", worst, fewest, dt) + per};
}

// 2. zero ReLU Jacobian certifies the template's topology
Verdict certificate_suite() {
  const auto t0 = Clock::now();
  int passed = 0;
  std::string bad;
  for (int i = 0; i < 20; ++i) {
    const SynthKind kind = i < 10 ? SynthKind::disk : SynthKind::bean;
    const auto c = synth(kind, static_cast<std::uint64_t>(i % 10), {64, 64});
    const auto r = segment_supervised(c.image, c.template_mask, c.label, kPaperWeights, {});
    const auto& rep = r.report();
    const int tb0 = b0_of(c.template_mask);
    const bool ok = rep.relu_jacobian == 0.0 && rep.min_determinant > 0.0 && b0_of(r.pred_mask()) == 1 && tb0 == 1;
    passed += ok;
    if (!ok) bad += fmt(" case%d(relu=%.2e,mindet=%.3f,b0=%d)", i, rep.relu_jacobian, rep.min_determinant,
                        b0_of(r.pred_mask()));
  }
  const double dt = seconds_since(t0);
  return {passed == 20 && dt < 300.0, fmt("%d/20 certified, %.1fs", passed, dt) + bad};
}

// Disk template against ellipses with a circular bite of moderate depth.
std::pair<SoftMask, SoftMask> bitten_case(std::uint64_t seed) {
  const GridSpec g{64, 64};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * U(rng); };
  const std::array<double, 2> c{uni(-0.1, 0.1), uni(-0.1, 0.1)};
  const double rx = uni(0.45, 0.55), ry = uni(0.4, 0.5), bite = uni(0.25, 0.3), depth = uni(0.25, 0.35);
  const SoftMask label = detail::bean_mask(g, c, rx, ry, static_cast<int>(seed % 4), bite, depth);
  return {rasterize(ShapeSpec::disk(0.4), g), label};
}

// 3. larger lambda_jac never hurts topology; lambda_jac = 0 folds somewhere
Verdict jacobian_ablation() {
  const std::vector<double> lambdas{0.0, 1.0, 10.0};
  std::vector<double> mean_err;
  std::vector<double> max_ljac;
  int folded_at_zero = 0;
  std::string summary;
  for (double lj : lambdas) {
    double err = 0.0, worst = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto [templ, label] = bitten_case(seed);
      const auto r = segment_supervised(label.as_image(), templ, label, {1.0, lj, 0.01}, {});
      err += evaluate(r.pred_mask(), label).betti.betti_error;
      worst = std::max(worst, r.report().relu_jacobian);
      if (lj == 0.0 && r.report().negative_cell_count > 0) ++folded_at_zero;
    }
    mean_err.push_back(err / 10.0);
    max_ljac.push_back(worst);
    summary += fmt(" lambda=%g: betti_err %.2f, max L_jac %.2e;", lj, err / 10.0, worst);
  }
  const bool trend = mean_err[0] >= mean_err[1] && mean_err[1] >= mean_err[2];
  const bool exact = max_ljac[1] == 0.0 && max_ljac[2] == 0.0;
  return {trend && exact && folded_at_zero >= 1, fmt("folded cases at lambda=0: %d;", folded_at_zero) + summary};
}

// 4. coarse-to-fine helps and saturates
Verdict multilevel_trend() {
  const auto t0 = Clock::now();
  std::map<int, double> mean;
  int betti_errors = 0;
  for (int levels : {1, 3, 4}) {
    double sum = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto c = synth(SynthKind::bean, seed, {128, 128});
      PyramidConfig p;
      p.levels = levels;
      const auto r = segment_multilevel(c.image, c.template_mask, &c.label, kPaperWeights, p, {});
      const auto m = evaluate(r.pred_mask(), c.label);
      sum += m.dice;
      betti_errors += m.betti.betti_error;
    }
    mean[levels] = sum / 10.0;
  }
  const double dt = seconds_since(t0);
  const bool ok = mean[3] >= mean[1] && std::abs(mean[4] - mean[3]) <= 0.01 && betti_errors == 0 && dt < 900.0;
  return {ok, fmt("mean Dice L1 %.4f L3 %.4f L4 %.4f, betti errors %d, %.1fs", mean[1], mean[3], mean[4],
                  betti_errors, dt)};
}

// 5. Chan-Vese driven segmentation of noisy two-level lesions
Verdict unsupervised_suite() {
  int good = 0;
  double worst_time = 0.0, total_time = 0.0, min_dice = 1.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto c = synth(SynthKind::disk, seed, {64, 64}, 0.05);
    const auto t0 = Clock::now();
    const auto r = segment_unsupervised(c.image, c.template_mask, kPaperWeights, {});
    const double dt = seconds_since(t0);
    worst_time = std::max(worst_time, dt);
    total_time += dt;
    const auto m = evaluate(r.pred_mask(), c.label);
    min_dice = std::min(min_dice, m.dice);
    good += m.dice >= 0.95 && m.betti.b0 == 1;
  }
  return {good >= 18, fmt("%d/20 with Dice >= 0.95 and b0 = 1 (min Dice %.4f); wall time mean %.2fs max %.2fs", good,
                          min_dice, total_time / 20.0, worst_time)};
}

// 6. fill first, dig second on annuli
Verdict ffds_suite() {
  int good = 0;
  std::string bad;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto c = synth(SynthKind::annulus, seed, {64, 64});
    FfdsSchedule s{1.0 / 3.0, *c.filled_template, c.template_mask, *c.filled_label, c.label};
    const auto r = segment_ffds(c.image, s, kPaperWeights, {});
    const auto m = evaluate(r.pred_mask(), c.label);
    const bool ok = m.betti.b0 == 1 && m.betti.b1 == 1 && m.dice >= 0.95;
    good += ok;
    if (!ok) bad += fmt(" seed%d(dice=%.4f,b0=%d,b1=%d)", static_cast<int>(seed), m.dice, m.betti.b0, m.betti.b1);
  }
  return {good >= 9, fmt("%d/10 with b0 = 1, b1 = 1, Dice >= 0.95", good) + bad};
}

// 7. two organs, one field each
Verdict multi_object_suite() {
  int good = 0;
  double min_dice = 1.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto c = synth(SynthKind::two_organs, seed, {64, 64});
    const auto r = segment_multi_object(c.image, MultiObjectSet(c.templates), c.labels, kPaperWeights, {});
    bool ok = true;
    for (std::size_t o = 0; o < 2; ++o) {
      const auto m = evaluate(r.pred_masks[o], c.labels[o]);
      min_dice = std::min(min_dice, m.dice);
      ok = ok && m.dice >= 0.98 && m.betti.b0 == 1;
    }
    good += ok;
  }
  const auto c = synth(SynthKind::two_organs, 0, {64, 64});
  OptimizerConfig cfg;
  cfg.iterations = 100;
  const auto single = segment_supervised(c.image, c.templates[0], c.labels[0], kPaperWeights, cfg);
  const auto multi = segment_multi_object(c.image, MultiObjectSet({c.templates[0]}), {c.labels[0]}, kPaperWeights, cfg);
  const bool same = single.field() == multi.field() && single.loss_trace == multi.loss_trace;
  return {good == 10 && same, fmt("%d/10 seeds with both objects Dice >= 0.98 and b0 = 1 (min %.4f); q=1 bit-match %s",
                                  good, min_dice, same ? "yes" : "no")};
}

// 8. metric and loss implementations against brute force
Verdict oracle_suite() {
  std::mt19937_64 rng(8);
  auto random_mask = [&](const GridSpec& g, double density) {
    std::bernoulli_distribution B(density);
    std::vector<double> v(g.size());
    for (double& x : v) x = B(rng) ? 1.0 : 0.0;
    return SoftMask(g, std::move(v));
  };
  auto random_grid = [&](int rank) {
    if (rank == 2) return GridSpec{2 + rng() % 15, 2 + rng() % 15};
    return GridSpec{2 + rng() % 15, 2 + rng() % 15, 2 + rng() % 15};
  };
  double hd_err = 0.0;
  int hd_pairs = 0, cc_bad = 0;
  while (hd_pairs < 100) {
    const GridSpec g = random_grid(2 + hd_pairs % 2);
    const SoftMask a = random_mask(g, 0.25), b = random_mask(g, 0.25);
    if (a.mass() == 0 || b.mass() == 0) continue;
    hd_err = std::max(hd_err, std::abs(hausdorff(a, b) - oracle::brute_hausdorff(a, b)));
    ++hd_pairs;
  }
  for (int i = 0; i < 100; ++i) {
    const SoftMask m = random_mask(random_grid(2 + i % 2), i % 2 ? 0.3 : 0.5);
    cc_bad += betti(m).b0 != oracle::flood_fill_components(m, true);
  }
  double lap_err = 0.0, cv_err = 0.0;
  for (int i = 0; i < 100; ++i) {
    const GridSpec g = i % 2 ? GridSpec{3 + rng() % 10, 3 + rng() % 10, 3 + rng() % 10}
                             : GridSpec{3 + rng() % 14, 3 + rng() % 14};
    std::uniform_real_distribution<double> U(0.0, 1.0);
    std::vector<double> d(g.rank() * g.size());
    for (double& x : d) x = 0.4 * U(rng) - 0.2;
    const DisplacementField v(g, d);
    const double lap = laplacian_loss(v).value;
    lap_err = std::max(lap_err, std::abs(lap - oracle::brute_laplacian(v)) / std::max(1.0, lap));
    std::vector<double> img(g.size()), p(g.size());
    for (double& x : img) x = U(rng);
    for (double& x : p) x = U(rng);
    cv_err = std::max(cv_err, std::abs(chan_vese_loss(Image(g, img), SoftMask(g, p)).value -
                                       oracle::brute_chan_vese(img, p)));
  }
  const bool ok = hd_err <= 1e-9 && cc_bad == 0 && lap_err <= 1e-12 && cv_err <= 1e-12;
  return {ok, fmt("hausdorff max err %.1e over %d pairs, component mismatches %d/100, laplacian rel err %.1e, "
                  "chan-vese err %.1e",
                  hd_err, hd_pairs, cc_bad, lap_err, cv_err)};
}

// 9. slices missing from the target do not split the warped ball
Verdict information_loss() {
  const auto t0 = Clock::now();
  const GridSpec g{64, 64, 64};
  SoftMask label = rasterize(ShapeSpec::ball(0.6), g);
  std::mt19937_64 rng(9);
  Image image = render_two_level(label, 0.1, 0.8, 0.02, rng);
  std::vector<double> lv(label.values().begin(), label.values().end());
  std::vector<double> iv(image.values().begin(), image.values().end());
  // zero the middle 20% of the slices along z
  const std::size_t gap = (g.extent(2) * 2 + 9) / 10;
  const std::size_t z0 = (g.extent(2) - gap) / 2;
  const std::size_t plane = g.extent(0) * g.extent(1);
  for (std::size_t z = z0; z < z0 + gap; ++z) {
    for (std::size_t n = z * plane; n < (z + 1) * plane; ++n) lv[n] = iv[n] = 0.0;
  }
  const SoftMask corrupted(g, lv);
  const int baseline_b0 = betti(corrupted).b0;
  const SoftMask templ = rasterize(ShapeSpec::ball(0.45), g);
  OptimizerConfig cfg;
  cfg.iterations = 300;
  const auto r = segment_supervised(Image(g, iv), templ, corrupted, kPaperWeights, cfg);
  const int b0 = b0_of(r.pred_mask());
  const double dt = seconds_since(t0);
  return {b0 == 1 && baseline_b0 == 2,
          fmt("%zu of %zu slices zeroed; thresholded label b0 = %d, warped template b0 = %d, negative cells %zu, "
              "%.1fs",
              gap, g.extent(2), baseline_b0, b0, r.report().negative_cell_count, dt)};
}

std::map<std::string, std::string> read_tree(const std::filesystem::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    std::ifstream f(e.path(), std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    files[e.path().filename().string()] = ss.str();
  }
  return files;
}

// 10. same seed, same bytes; volume files round-trip exactly
Verdict determinism_and_io() {
  const auto root = std::filesystem::temp_directory_path() / "tpsn_acceptance_determinism";
  std::filesystem::remove_all(root);
  std::vector<std::map<std::string, std::string>> trees;
  for (int rep = 0; rep < 2; ++rep) {
    const auto dir = root / ("run" + std::to_string(rep));
    std::filesystem::create_directories(dir);
    const auto c = synth(SynthKind::bean, 42, {64, 64});
    write_volume((dir / "image.tpwv").string(), to_volume(c.image.grid(), c.image.values()));
    write_volume((dir / "label.tpwv").string(), to_u8_volume(c.label));
    write_volume((dir / "template.tpwv").string(), to_u8_volume(c.template_mask));
    std::ofstream(dir / "case.cfg") << "image = image.tpwv\nlabel = label.tpwv\ntemplate = template.tpwv\n"
                                       "output_dir = out\n";
    run_segmentation(load_run_config((dir / "case.cfg").string()));
    trees.push_back(read_tree(dir / "out"));
  }
  const bool identical = trees[0] == trees[1] && !trees[0].empty();

  std::mt19937_64 rng(10);
  int exact = 0;
  for (int i = 0; i < 1000; ++i) {
    Volume v;
    const int rank = 2 + static_cast<int>(rng() % 2);
    for (int a = 0; a < rank; ++a) v.dims.push_back(1 + static_cast<std::uint32_t>(rng() % (rank == 2 ? 40 : 12)));
    v.dtype = rng() % 2 ? DType::u8 : DType::f32;
    for (std::size_t n = 0; n < v.count(); ++n) {
      if (v.dtype == DType::u8) {
        v.u8.push_back(static_cast<std::uint8_t>(rng()));
      } else {
        // any finite bit pattern, including subnormals and negative zero
        std::uint32_t bits = static_cast<std::uint32_t>(rng());
        if (((bits >> 23) & 0xFFu) == 0xFFu) bits &= ~(1u << 23);
        v.f32.push_back(std::bit_cast<float>(bits));
      }
    }
    const std::string bytes = encode_volume(v);
    const Volume back = decode_volume(std::vector<std::uint8_t>(bytes.begin(), bytes.end()));
    exact += back == v && encode_volume(back) == bytes;
  }
  std::filesystem::remove_all(root);
  return {identical && exact == 1000,
          fmt("repeat run outputs %s (%zu files); %d/1000 volume round-trips bit-exact",
              identical ? "byte-identical" : "DIFFER", trees[0].size(), exact)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tpsn acceptance criteria"};
  std::vector<int> only;
  app.add_option("criteria", only, "criterion numbers to run (default: all)")->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"gradient suite", gradient_suite},
      {"bijectivity certificate implies topology", certificate_suite},
      {"lambda_jac ablation trend", jacobian_ablation},
      {"multi-level trend", multilevel_trend},
      {"unsupervised segmentation", unsupervised_suite},
      {"FFDS doubly-connected", ffds_suite},
      {"multi-object", multi_object_suite},
      {"oracle equivalence", oracle_suite},
      {"information-loss robustness", information_loss},
      {"determinism and IO", determinism_and_io},
  };
  const std::set<int> selected(only.begin(), only.end());
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failures += !v.pass;
    std::printf("criterion %d (%s): %s - %s\n", id, criteria[i].first, v.pass ? "PASS" : "FAIL", v.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
