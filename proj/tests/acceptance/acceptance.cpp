// Acceptance checks. Usage: acceptance [criterion ...], default all.
// Prints one PASS/FAIL line per criterion; exit status 1 if any fails.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sscf/cli.hpp"
#include "sscf/ops.hpp"
#include "support/testing.hpp"

using namespace sscf;
namespace fs = std::filesystem;
using sscf::testing::gradcheck;
using sscf::testing::project;
using sscf::testing::random_tensor;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Shorter runs for the trend and ablation criteria: half the channels and
// 1000 training episodes per model, everything else at the defaults.
cli::RunConfig trend_config() {
  cli::RunConfig c;
  c.channel_divisor = 16;
  c.episodes = 1000;
  c.log_every = 0;
  return c;
}
constexpr std::size_t kTrendSeeds = 3;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// 1 -------------------------------------------------------------------------
Outcome energy_arithmetic() {
  const auto snn = energy::report_from_totals(1'390'000'000, 130'000'000, 0);
  const auto ann = energy::report_from_totals(0, 0, 4'840'000'000);
  const double e_snn = snn.e_snn_joules * 1e3, e_ann = ann.e_ann_equiv_joules * 1e3;
  Outcome o;
  o.pass = std::abs(e_snn - 1.849) <= 0.0005 && std::abs(e_ann - 22.264) <= 0.0005;
  o.detail = "E_snn " + fmt("%.4f", e_snn) + " mJ (want 1.849), E_ann " + fmt("%.4f", e_ann) + " mJ (want 22.264)";
  return o;
}

// 2 -------------------------------------------------------------------------
Outcome gradient_suite() {
  constexpr int kInstances = 20;
  constexpr double kTol = 1e-4;
  nn::Rng rng(2024);
  std::map<std::string, double> worst;
  auto check = [&](const std::string& op, const testing::ScalarFn& f, const std::vector<Tensor>& in) {
    const double e = gradcheck(f, in);
    worst[op] = std::max(worst[op], std::isfinite(e) ? e : 1e9);
  };
  for (int i = 0; i < kInstances; ++i) {
    nn::Rng wr(static_cast<std::uint64_t>(i));
    auto projected = [wr](const Tensor& t) {
      nn::Rng r = wr;
      return project(t, r);
    };
    if (i % 2 == 0) {
      // strided, padded: im2col path
      Tensor x = random_tensor({2, 2, 5, 5}, rng), w = random_tensor({3, 2, 3, 3}, rng), b = random_tensor({3}, rng);
      check("conv2d", [&](const std::vector<Tensor>& in) { return projected(conv2d(in[0], in[1], in[2], 2, 1)); },
            {x, w, b});
    } else {
      // stride 1 with channel reduction: shifted-accumulate path
      Tensor x = random_tensor({1, 4, 4, 4}, rng), w = random_tensor({2, 4, 3, 3}, rng);
      check("conv2d", [&](const std::vector<Tensor>& in) { return projected(conv2d(in[0], in[1], Tensor{}, 1, 1)); },
            {x, w});
    }
    {
      Tensor x = random_tensor({3, 2, 2, 2}, rng), g = random_tensor({2}, rng, 0.5, 1.5), b = random_tensor({2}, rng);
      check("batchnorm",
            [&](const std::vector<Tensor>& in) {
              BatchNormState st(2);
              return projected(batchnorm2d(in[0], in[1], in[2], st, Mode::train));
            },
            {x, g, b});
    }
    {
      Tensor x = random_tensor({3, 5}, rng, -3, 3);
      const std::size_t axis = static_cast<std::size_t>(i % 2);
      check("softmax", [&](const std::vector<Tensor>& in) { return projected(softmax(in[0], axis)); }, {x});
    }
    {
      Tensor x = random_tensor({1, 2, 3, 3, 3, 3}, rng), w = random_tensor({2, 2, 3, 3, 3, 3}, rng),
             b = random_tensor({2}, rng);
      check("conv4d", [&](const std::vector<Tensor>& in) { return projected(conv4d(in[0], in[1], in[2], 1)); },
            {x, w, b});
    }
    {
      Tensor c = random_tensor({2, 2, 3, 2, 3}, rng, -2, 2);
      check("attention",
            [&](const std::vector<Tensor>& in) {
              auto a = cfc::attention_maps(in[0], 5.0);
              nn::Rng r(static_cast<std::uint64_t>(100 + i));
              return add(project(a.a_q, r), project(a.a_s, r));
            },
            {c});
    }
    {
      Tensor f = random_tensor({2, 3, 2, 2}, rng), a = random_tensor({2, 2, 2}, rng, 0, 1);
      check("pooling", [&](const std::vector<Tensor>& in) { return projected(cfc::attended_pool(in[0], in[1])); },
            {f, a});
    }
    {
      Tensor logits = random_tensor({3, 4, 5}, rng, -2, 2);
      std::vector<std::size_t> labels{static_cast<std::size_t>(i % 5), 1, 4, 0};
      check("tet_loss", [&](const std::vector<Tensor>& in) { return losses::tet_loss(in[0], labels); }, {logits});
    }
    {
      Tensor p = random_tensor({3, 4, 6}, rng), q = random_tensor({3, 4, 6}, rng);
      check("infonce_loss",
            [&](const std::vector<Tensor>& in) {
              return losses::infonce_loss(losses::EmbeddingSet{in[0], in[1], {3, 1, 4, 2}, {1, 2, 3}}, 0.2);
            },
            {p, q});
    }
  }
  Outcome o;
  std::string parts;
  for (const auto& [op, e] : worst) {
    if (!(e < kTol)) o.pass = false;
    parts += (parts.empty() ? "" : ", ") + op + " " + fmt("%.1e", e);
  }
  o.detail = std::to_string(kInstances) + " instances each, worst relative error: " + parts;
  return o;
}

// 3 -------------------------------------------------------------------------
Outcome lif_correctness() {
  const spiking::LifParams p{0.5, 1.0, 1.0};
  auto run = [](const std::vector<double>& in, const spiking::LifParams& params) {
    Tensor s = spiking::lif_layer(Tensor({in.size(), 1}, in), params);
    return std::vector<double>(s.data().begin(), s.data().end());
  };
  Outcome o;
  const bool trace_a = run({0.6, 0.6, 0.6}, p) == std::vector<double>{0, 0, 1};
  const bool trace_b = run({1.2, 1.2, 1.2, 1.2, 1.2}, p) == std::vector<double>(5, 1.0);
  nn::Rng rng(31);
  std::uniform_real_distribution<double> tau(0.05, 1.0), th(0.1, 2.0), in(-1.0, 3.0);
  std::size_t bad_binary = 0, bad_reset = 0, bad_fused = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const spiking::LifParams q{tau(rng), th(rng), 1.0};
    const std::size_t T = 12, n = 8;
    std::vector<double> v(T * n);
    for (auto& x : v) x = in(rng);
    Tensor seq({T, n}, v);
    Tensor fused = spiking::lif_layer(seq, q);
    spiking::LifState state{Tensor::zeros({n})};
    for (std::size_t t = 0; t < T; ++t) {
      auto r = spiking::lif_step(state, reshape(slice(seq, 0, t, 1), {n}), q);
      for (std::size_t k = 0; k < n; ++k) {
        const double s = r.spikes[k];
        if (s != 0.0 && s != 1.0) ++bad_binary;
        if (s == 1.0 && r.state.membrane[k] != 0.0) ++bad_reset;
        if (s != fused[t * n + k]) ++bad_fused;
      }
      state = r.state;
    }
  }
  o.pass = trace_a && trace_b && bad_binary == 0 && bad_reset == 0 && bad_fused == 0;
  o.detail = std::string("traces ") + (trace_a && trace_b ? "exact" : "WRONG") + "; 1000 sequences: " +
             std::to_string(bad_binary) + " non-binary, " + std::to_string(bad_reset) + " reset violations, " +
             std::to_string(bad_fused) + " fused/step mismatches";
  return o;
}

// 4 -------------------------------------------------------------------------
void brute_force_attention(const Tensor& c, double gamma, std::vector<double>& aq, std::vector<double>& as) {
  const auto P = c.dim(0), n = c.dim(1) * c.dim(2);
  aq.assign(P * n, 0.0);
  as.assign(P * n, 0.0);
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t x = 0; x < n; ++x)
      for (std::size_t y = 0; y < n; ++y) {
        double zq = 0, zs = 0;
        for (std::size_t k = 0; k < n; ++k) {
          zq += std::exp(c[(p * n + k) * n + y] / gamma);
          zs += std::exp(c[(p * n + x) * n + k] / gamma);
        }
        aq[p * n + x] += std::exp(c[(p * n + x) * n + y] / gamma) / zq / static_cast<double>(n);
        as[p * n + y] += std::exp(c[(p * n + x) * n + y] / gamma) / zs / static_cast<double>(n);
      }
}

Outcome attention_properties() {
  constexpr double gamma = 5.0;
  nn::Rng rng(44);
  cfc::Cfc module({8, 8, 16, gamma, true}, rng);
  std::uniform_real_distribution<double> shift(-10.0, 10.0);
  double worst_sum = 0, worst_shift = 0, worst_sym = 0, worst_oracle = 0;
  NoGradGuard guard;
  for (int i = 0; i < 100; ++i) {
    const std::size_t side = i % 2 == 0 ? 2 : 3, P = 3;
    Tensor raw = random_tensor({P, 1, side, side, side, side}, rng, -1, 1, false);
    Tensor c = reshape(module.refine(raw, Mode::train), {P, side, side, side, side});
    const auto a = cfc::attention_maps(c, gamma);
    const std::size_t n = side * side;
    for (std::size_t p = 0; p < P; ++p) {
      double sq = 0, ss = 0;
      for (std::size_t k = 0; k < n; ++k) {
        sq += a.a_q[p * n + k];
        ss += a.a_s[p * n + k];
      }
      worst_sum = std::max({worst_sum, std::abs(sq - 1), std::abs(ss - 1)});
    }
    const auto b = cfc::attention_maps(add_scalar(c, shift(rng)), gamma);
    worst_shift = std::max({worst_shift, testing::max_abs_diff(a.a_q.data(), b.a_q.data()),
                            testing::max_abs_diff(a.a_s.data(), b.a_s.data())});
    Tensor m = reshape(c, {P, n, n});
    Tensor sym = reshape(mul_scalar(add(m, permute(m, {0, 2, 1})), 0.5), {P, side, side, side, side});
    const auto s = cfc::attention_maps(sym, gamma);
    worst_sym = std::max(worst_sym, testing::max_abs_diff(s.a_q.data(), s.a_s.data()));
    if (side == 2) {
      std::vector<double> aq, as;
      brute_force_attention(c, gamma, aq, as);
      worst_oracle = std::max({worst_oracle, testing::max_abs_diff(a.a_q.data(), aq),
                               testing::max_abs_diff(a.a_s.data(), as)});
    }
  }
  Outcome o;
  o.pass = worst_sum <= 1e-6 && worst_shift <= 1e-9 && worst_sym <= 1e-9 && worst_oracle <= 1e-12;
  o.detail = "100 refined tensors: |sum-1| " + fmt("%.1e", worst_sum) + ", shift " + fmt("%.1e", worst_shift) +
             ", symmetric " + fmt("%.1e", worst_sym) + ", 2x2 oracle " + fmt("%.1e", worst_oracle);
  return o;
}

// 5 -------------------------------------------------------------------------
Outcome loss_identities() {
  nn::Rng rng(55);
  std::uniform_int_distribution<std::size_t> dim(1, 8);
  std::size_t tet_mismatch = 0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t B = dim(rng), K = dim(rng) + 1;
    Tensor logits = random_tensor({B, K}, rng, -5, 5, false);
    std::vector<std::size_t> labels(B);
    for (auto& l : labels) l = std::uniform_int_distribution<std::size_t>(0, K - 1)(rng);
    const double tet = losses::tet_loss(reshape(logits, {1, B, K}), labels)[0];
    const double ce = cross_entropy_with_logits(logits, labels)[0];
    if (std::bit_cast<std::uint64_t>(tet) != std::bit_cast<std::uint64_t>(ce)) ++tet_mismatch;
  }
  double worst_ln = 0;
  for (std::size_t n : {2u, 5u, 20u}) {
    Tensor v = random_tensor({1, 1, 7}, rng, -1, 1, false);
    std::vector<std::size_t> ids(n);
    for (std::size_t k = 0; k < n; ++k) ids[k] = k;
    Tensor same = reshape(v, {7});
    std::vector<double> rep;
    for (std::size_t k = 0; k < 3 * n; ++k) rep.insert(rep.end(), same.data().begin(), same.data().end());
    Tensor p({3, n, 7}, rep), q({3, n, 7}, rep);
    const double l = losses::infonce_loss(losses::EmbeddingSet{p, q, ids, {0, n - 1, n / 2}}, 0.2)[0];
    worst_ln = std::max(worst_ln, std::abs(l - std::log(static_cast<double>(n))));
  }
  std::size_t endpoint_mismatch = 0;
  for (int i = 0; i < 100; ++i) {
    Tensor a = random_tensor({1}, rng, 0, 5, false), b = random_tensor({1}, rng, 0, 5, false);
    if (losses::total_loss(a, b, 1.0)[0] != a[0]) ++endpoint_mismatch;
    if (losses::total_loss(a, b, 0.0)[0] != b[0]) ++endpoint_mismatch;
  }
  Outcome o;
  o.pass = tet_mismatch == 0 && worst_ln <= 1e-10 && endpoint_mismatch == 0;
  o.detail = "TET(T=1) vs CE: " + std::to_string(tet_mismatch) + "/100 bit mismatches; |InfoNCE - ln N| " +
             fmt("%.1e", worst_ln) + "; endpoint mismatches " + std::to_string(endpoint_mismatch);
  return o;
}

// 6 -------------------------------------------------------------------------
Outcome overfit_sanity() {
  cli::RunConfig c;
  c.episodes = 200;
  c.log_every = 0;
  const auto data = cli::load_data(c);
  auto model = cli::make_model(c, data);
  fewshot::Rng rng(fewshot::derive_seed(c.seed, 6));
  const auto episode = fewshot::sample_episode(data.dataset, data.split.train, 5, 1, c.q_query, rng);
  const auto history = fewshot::train(*model, data.dataset, data.split, cli::train_config(c), {},
                                      [&](std::size_t, fewshot::Rng&) { return episode; });
  const double first = history.front().loss_total, last = history.back().loss_total;
  const double drop = 1.0 - last / first, acc = history.back().accuracy;
  Outcome o;
  o.pass = drop >= 0.9 && acc == 1.0;
  o.detail = "loss " + fmt("%.4f", first) + " -> " + fmt("%.4f", last) + " (" + fmt("%.1f", 100 * drop) +
             "% drop, want >= 90%), final query accuracy " + fmt("%.2f", acc);
  return o;
}

// 7 -------------------------------------------------------------------------
Outcome desk_learning() {
  cli::RunConfig c;  // defaults: 2000 episodes, 30/10 synthetic split
  c.log_every = 500;
  const auto data = cli::load_data(c);
  auto model = cli::train_model(c, data, [&](const fewshot::EpisodeMetrics& m) {
    if ((m.episode + 1) % c.log_every == 0) {
      std::cerr << "  episode " << m.episode + 1 << " loss " << m.loss_total << "\n";
    }
  });
  auto ec = cli::eval_config(c);
  const auto one = fewshot::evaluate(*model, data.dataset, data.split, ec);
  ec.k_shot = 5;
  const auto five = fewshot::evaluate(*model, data.dataset, data.split, ec);
  Outcome o;
  o.pass = one.mean >= 0.60 && five.mean >= 0.75;
  o.detail = "5w1s " + fmt("%.3f", one.mean) + " ± " + fmt("%.3f", one.ci95) + " (floor 0.60), 5w5s " +
             fmt("%.3f", five.mean) + " ± " + fmt("%.3f", five.ci95) + " (floor 0.75), 200 test episodes";
  return o;
}

// 8 -------------------------------------------------------------------------
std::string describe(const std::vector<cli::SweepPoint>& pts) {
  std::string s;
  for (const auto& p : pts) s += (s.empty() ? "" : " ") + fmt("%g:", p.value) + fmt("%.3f", p.mean);
  return s;
}

Outcome trend_reproductions() {
  const auto base = trend_config();
  // (a) noise, InfoNCE model against the CE-only model
  auto info = cli::run_sweep(base, cli::SweepParam::noise, {0.0, 0.4, 0.8}, kTrendSeeds, std::cerr);
  cli::RunConfig ce_cfg = base;
  ce_cfg.lambda = 1.0;
  auto ce = cli::run_sweep(ce_cfg, cli::SweepParam::noise, {0.8}, kTrendSeeds, std::cerr);
  const bool a = info[0].mean > info[1].mean && info[1].mean > info[2].mean && info[2].mean > ce[0].mean;
  // (b) lambda grid: interior maximum
  auto lam = cli::run_sweep(base, cli::SweepParam::lambda, {0.2, 0.4, 0.6, 0.7, 0.8, 1.0}, kTrendSeeds, std::cerr);
  std::size_t best = 0;
  for (std::size_t i = 1; i < lam.size(); ++i)
    if (lam[i].mean > lam[best].mean) best = i;
  const bool b = best != 0 && best != lam.size() - 1;
  // (c) T grid: each step may drop by no more than the combined 95% interval
  auto ts = cli::run_sweep(base, cli::SweepParam::timesteps, {4, 8, 12}, kTrendSeeds, std::cerr);
  bool c = true;
  for (std::size_t i = 1; i < ts.size(); ++i) {
    const double slack = std::hypot(ts[i].ci95, ts[i - 1].ci95);
    if (ts[i].mean < ts[i - 1].mean - slack) c = false;
  }
  Outcome o;
  o.pass = a && b && c;
  o.detail = std::string("(a) ") + (a ? "ok" : "FAIL") + " noise " + describe(info) + " CE@0.8 " +
             fmt("%.3f", ce[0].mean) + "; (b) " + (b ? "ok" : "FAIL") + " lambda " + describe(lam) + "; (c) " +
             (c ? "ok" : "FAIL") + " T " + describe(ts) + " (" + std::to_string(kTrendSeeds) + " seeds)";
  return o;
}

// 9 -------------------------------------------------------------------------
Outcome ablation_direction() {
  const auto base = trend_config();
  const auto data = cli::load_data(base);
  auto pooled = [&](bool sfe, bool cfc) {
    std::vector<double> acc;
    for (std::size_t s = 0; s < kTrendSeeds; ++s) {
      cli::RunConfig c = base;
      c.seed = fewshot::derive_seed(base.seed, s);
      c.use_sfe = sfe;
      c.use_cfc = cfc;
      auto model = cli::train_model(c, data);
      const auto r = fewshot::evaluate(*model, data.dataset, data.split, cli::eval_config(c));
      std::cerr << "  sfe=" << sfe << " cfc=" << cfc << " seed " << s << ": " << r.mean << "\n";
      acc.insert(acc.end(), r.accuracies.begin(), r.accuracies.end());
    }
    return fewshot::summarize(acc).mean;
  };
  const double full = pooled(true, true), no_sfe = pooled(false, true), no_cfc = pooled(true, false);
  Outcome o;
  o.pass = full > no_sfe && full > no_cfc;
  o.detail = "full " + fmt("%.3f", full) + ", without SFE " + fmt("%.3f", no_sfe) + ", without CFC " +
             fmt("%.3f", no_cfc) + " (" + std::to_string(kTrendSeeds) + " seeds)";
  return o;
}

// 10 ------------------------------------------------------------------------
Outcome determinism() {
  cli::RunConfig c;
  c.episodes = 300;
  c.log_every = 0;
  const fs::path root = fs::temp_directory_path() / "sscf_acceptance_determinism";
  fs::remove_all(root);
  std::ostringstream log;
  const auto a = cli::cmd_train(c, root / "a", log);
  const auto b = cli::cmd_train(c, root / "b", log);
  const std::string ma = slurp(root / "a" / "metrics.jsonl"), mb = slurp(root / "b" / "metrics.jsonl");
  Outcome o;
  o.pass = !ma.empty() && ma == mb && a.weights_sha1 == b.weights_sha1;
  o.detail = std::to_string(ma.size()) + "-byte metrics files " + (ma == mb ? "identical" : "DIFFER") +
             ", weight hashes " + (a.weights_sha1 == b.weights_sha1 ? "equal" : "differ");
  fs::remove_all(root);
  return o;
}

struct Criterion {
  int id;
  const char* title;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "energy arithmetic", energy_arithmetic},
      {2, "gradient suite", gradient_suite},
      {3, "LIF correctness", lif_correctness},
      {4, "attention properties", attention_properties},
      {5, "loss identities", loss_identities},
      {6, "overfit sanity", overfit_sanity},
      {7, "desk-scale learning", desk_learning},
      {8, "trend reproductions", trend_reproductions},
      {9, "ablation direction", ablation_direction},
      {10, "determinism", determinism},
  };
  std::vector<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.push_back(std::atoi(argv[i]));
  if (wanted.empty())
    for (const auto& c : all) wanted.push_back(c.id);
  bool ok = true;
  for (int id : wanted) {
    auto it = std::find_if(all.begin(), all.end(), [&](const Criterion& c) { return c.id == id; });
    if (it == all.end()) {
      std::cerr << "unknown criterion " << id << "\n";
      return 2;
    }
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = it->run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("criterion %d %s: %s  %s  [%.1f s]\n", id, o.pass ? "PASS" : "FAIL", it->title, o.detail.c_str(),
                secs);
    std::fflush(stdout);
    ok = ok && o.pass;
  }
  return ok ? 0 : 1;
}
