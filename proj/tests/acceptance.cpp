// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails. Oracles are computed here from
// first principles, never through the code under test.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/LU>
#include <nlohmann/json.hpp>

#include "drm/causal.hpp"
#include "drm/cli.hpp"
#include "drm/common.hpp"
#include "drm/figures.hpp"
#include "drm/glm.hpp"
#include "drm/ingest.hpp"
#include "drm/mcmc/sampler.hpp"
#include "drm/rng.hpp"
#include "drm/scorer.hpp"
#include "drm/synth.hpp"

namespace fs = std::filesystem;
using namespace drm;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* pattern, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, a);
  return buf;
}

// ------------------------------------------------------------------ 1

Outcome conjugacy_oracle() {
  Philox4x32 rng(20240101, 0);
  std::uniform_int_distribution<int> pick_k(0, 2), count(0, 100);
  std::uniform_real_distribution<double> alpha(0.5, 5.0);
  constexpr int kPairs = 50;
  const int ks[] = {2, 3, 5};

  // Pairs sharing a k are packed into the hours of one model.
  std::map<int, std::vector<std::pair<std::vector<double>, std::vector<long>>>> groups;
  for (int i = 0; i < kPairs; ++i) {
    const int k = ks[pick_k(rng)];
    std::vector<double> a(static_cast<std::size_t>(k));
    std::vector<long> c(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j) {
      a[static_cast<std::size_t>(j)] = alpha(rng);
      c[static_cast<std::size_t>(j)] = count(rng);
    }
    groups[k].emplace_back(std::move(a), std::move(c));
  }

  double worst = 0.0;
  int checked = 0;
  for (const auto& [k, pairs] : groups) {
    for (std::size_t start = 0; start < pairs.size(); start += causal::kHours) {
      causal::WeightMatrix w;
      Eigen::MatrixXd alpha_m = Eigen::MatrixXd::Ones(k, causal::kHours);
      for (int j = 0; j < k; ++j) {
        w.outcomes.push_back("o" + std::to_string(j));
        w.counts.push_back({});
      }
      const std::size_t n = std::min<std::size_t>(causal::kHours, pairs.size() - start);
      for (std::size_t h = 0; h < n; ++h)
        for (int j = 0; j < k; ++j) {
          w.counts[static_cast<std::size_t>(j)][h] = pairs[start + h].second[static_cast<std::size_t>(j)];
          alpha_m(j, static_cast<Eigen::Index>(h)) = pairs[start + h].first[static_cast<std::size_t>(j)];
        }
      const auto model = scorer::build_per_consumer_model(w, alpha_m, "oracle");
      auto config = mcmc::score_sampler_defaults();
      config.seed = 11 + static_cast<std::uint64_t>(k) * 100 + start;
      const auto score = scorer::sample_posterior(model, config);
      for (std::size_t h = 0; h < n; ++h) {
        const auto& [a, c] = pairs[start + h];
        double total = 0.0;
        for (int j = 0; j < k; ++j) total += a[static_cast<std::size_t>(j)] + static_cast<double>(c[static_cast<std::size_t>(j)]);
        for (int j = 0; j < k; ++j) {
          const double exact = (a[static_cast<std::size_t>(j)] + static_cast<double>(c[static_cast<std::size_t>(j)])) / total;
          worst = std::max(worst, std::abs(score.mean(j, static_cast<Eigen::Index>(h)) - exact));
        }
        ++checked;
      }
    }
  }
  return {checked == kPairs && worst < 0.01,
          std::to_string(checked) + " pairs, max |mean - closed form| = " + fmt("%.5f", worst) +
              " (limit 0.01)"};
}

// ------------------------------------------------------------------ 2

Outcome marginal_normalization() {
  double worst = 0.0;
  for (int n = 1; n <= 4; ++n) {
    double sum = 0.0;
    int sequences = 1;
    for (int i = 0; i < n; ++i) sequences *= 3;
    for (int code = 0; code < sequences; ++code) {
      std::vector<long> counts(3, 0);
      for (int i = 0, c = code; i < n; ++i, c /= 3) ++counts[static_cast<std::size_t>(c % 3)];
      sum += std::exp(scorer::log_dirichlet_multinomial({1.0, 1.0, 1.0}, counts));
    }
    worst = std::max(worst, std::abs(sum - 1.0));
  }
  return {worst <= 1e-9, "max |sum - 1| over n = 1..4 is " + fmt("%.3g", worst) + " (limit 1e-9)"};
}

// ------------------------------------------------------------------ 3

class Gaussian final : public mcmc::LogDensityTarget {
public:
  explicit Gaussian(Eigen::MatrixXd cov) : precision_(cov.inverse()) {}
  std::size_t dimension() const override { return static_cast<std::size_t>(precision_.rows()); }
  double log_density(const mcmc::Vector& x, mcmc::Vector& grad) const override {
    grad = -precision_ * x;
    return 0.5 * x.dot(grad);
  }

private:
  Eigen::MatrixXd precision_;
};

Outcome sampler_validation() {
  auto config = mcmc::score_sampler_defaults();
  config.draws = 2500;  // 4 chains -> 10 000 kept draws
  config.seed = 3;
  std::ostringstream detail;
  bool ok = true;

  Eigen::MatrixXd c1(1, 1);
  c1 << 1.0;
  const auto t1 = mcmc::run_chains(Gaussian(c1), config);
  const auto d1 = t1.pooled_draws(0);
  double m = 0.0, v = 0.0;
  for (double x : d1) m += x;
  m /= static_cast<double>(d1.size());
  for (double x : d1) v += (x - m) * (x - m);
  v /= static_cast<double>(d1.size() - 1);
  ok = ok && d1.size() == 10000 && std::abs(m) <= 0.05 && std::abs(v - 1.0) <= 0.1 &&
       t1.divergence_count() == 0;
  detail << "1-D mean " << fmt("%.4f", m) << " var " << fmt("%.4f", v) << " div "
         << t1.divergence_count();

  Eigen::MatrixXd c2(2, 2);
  c2 << 1.0, 0.8, 0.8, 1.0;
  const auto t2 = mcmc::run_chains(Gaussian(c2), config);
  const auto a = t2.pooled_draws(0), b = t2.pooled_draws(1);
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double va = 0, vb = 0, cab = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
    cab += (a[i] - ma) * (b[i] - mb);
  }
  const double rho = cab / std::sqrt(va * vb);
  va /= n - 1;
  vb /= n - 1;
  ok = ok && a.size() == 10000 && std::abs(ma) <= 0.05 && std::abs(mb) <= 0.05 &&
       std::abs(va - 1.0) <= 0.1 && std::abs(vb - 1.0) <= 0.1 && std::abs(rho - 0.8) <= 0.1 &&
       t2.divergence_count() == 0;
  detail << "; 2-D means " << fmt("%.4f", ma) << "," << fmt("%.4f", mb) << " vars "
         << fmt("%.4f", va) << "," << fmt("%.4f", vb) << " rho " << fmt("%.4f", rho) << " div "
         << t2.divergence_count();
  return {ok, detail.str()};
}

// ------------------------------------------------------------------ 4, 5

const std::vector<double> kPrices = {lcl::kDefaultRate, lcl::kHighRate, lcl::kLowRate};
const std::vector<std::string> kLabels = {"Default", "High", "Low"};

std::vector<glm::RawRow> random_rows(Philox4x32& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<glm::RawRow> rows;
  for (std::size_t b = 0; b < kPrices.size(); ++b)
    for (int h = 0; h < causal::kHours; ++h) {
      glm::RawRow r;
      r.hour = h;
      r.price = kPrices[b];
      r.temp_avg = 10.0 + 5.0 * u(rng);
      r.temp_high = r.temp_avg + 2.0 + u(rng);
      r.temp_low = r.temp_avg - 2.0 + u(rng);
      r.consumption_avg = 0.5 + 0.3 * u(rng);
      r.consumption_difference = b == 0 ? 0.0 : 0.2 * u(rng);
      r.y = 0.3 * u(rng);
      rows.push_back(r);
    }
  return rows;
}

Outcome gradient_checks() {
  Philox4x32 rng(404, 0);
  std::uniform_real_distribution<double> u(-1.0, 1.0), unit(0.05, 0.95), scale(0.2, 2.0);
  double worst = 0.0;
  std::string where;
  for (int point = 0; point < 100; ++point) {
    const auto design = glm::make_design("g", kPrices, kLabels, random_rows(rng));
    glm::GlmOptions options;
    options.separate_cubic = point % 2 == 1;
    const glm::GlmModel model(design, {}, options);
    const auto& layout = model.layout();
    mcmc::Vector x(static_cast<Eigen::Index>(layout.size()));
    for (std::size_t i = 0; i < layout.nu(); ++i) x[static_cast<Eigen::Index>(i)] = u(rng);
    x[static_cast<Eigen::Index>(layout.nu())] = unit(rng);
    x[static_cast<Eigen::Index>(layout.sigma())] = scale(rng);
    mcmc::Vector grad, scratch;
    model.log_posterior(x, grad);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double h = 1e-5 * std::max(1.0, std::abs(x[i]));
      mcmc::Vector xp = x, xm = x;
      xp[i] += h;
      xm[i] -= h;
      const double fd = (model.log_posterior(xp, scratch) - model.log_posterior(xm, scratch)) / (2 * h);
      const double rel = std::abs(grad[i] - fd) / std::max({std::abs(fd), std::abs(grad[i]), 1e-3});
      if (rel > worst) {
        worst = rel;
        where = model.parameter_names()[static_cast<std::size_t>(i)];
      }
    }
  }
  return {worst < 1e-5, "100 points, worst relative error " + fmt("%.3g", worst) + " at " + where +
                            " (limit 1e-5)"};
}

Outcome glm_recovery() {
  constexpr int kRuns = 20;
  std::vector<int> covered;
  std::vector<std::string> names;
  double worst_r_hat = 0.0;
  int total_covered = 0, total = 0;
  for (int s = 0; s < kRuns; ++s) {
    Philox4x32 rng(500 + static_cast<std::uint64_t>(s), 0);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::normal_distribution<double> normal;
    auto rows = random_rows(rng);
    const auto skeleton = glm::make_design("r", kPrices, kLabels, rows);
    const glm::GlmModel truth_model(skeleton, {}, {});
    const auto& layout = truth_model.layout();
    mcmc::Vector truth(static_cast<Eigen::Index>(layout.size()));
    for (std::size_t i = 0; i < layout.nu(); ++i) truth[static_cast<Eigen::Index>(i)] = 0.3 * u(rng);
    const double nu = 0.9, sigma = 0.05;
    truth[static_cast<Eigen::Index>(layout.nu())] = nu;
    truth[static_cast<Eigen::Index>(layout.sigma())] = sigma;
    // Student-T(nu) noise as a normal over the square root of a scaled chi-square.
    std::gamma_distribution<double> chi2(0.5 * nu, 2.0);
    for (std::size_t r = 0; r < rows.size(); ++r)
      rows[r].y = truth_model.mu(truth, r) + sigma * normal(rng) / std::sqrt(chi2(rng) / nu);
    const auto design = glm::make_design("r", kPrices, kLabels, rows);

    auto config = mcmc::glm_sampler_defaults();
    config.seed = 9000 + static_cast<std::uint64_t>(s);
    const auto post = glm::fit(design, {}, config);
    worst_r_hat = std::max(worst_r_hat, post.summary.max_r_hat());
    if (covered.empty()) {
      covered.assign(layout.nu(), 0);
      names = post.trace.names;
    }
    for (std::size_t p = 0; p < layout.nu(); ++p) {
      auto d = post.trace.pooled_draws(p);
      std::sort(d.begin(), d.end());
      const double lo = d[static_cast<std::size_t>(0.025 * static_cast<double>(d.size()))];
      const double hi = d[static_cast<std::size_t>(0.975 * static_cast<double>(d.size())) - 1];
      const bool in = truth[static_cast<Eigen::Index>(p)] >= lo && truth[static_cast<Eigen::Index>(p)] <= hi;
      covered[p] += in;
      total_covered += in;
      ++total;
    }
  }
  const auto min_it = std::min_element(covered.begin(), covered.end());
  const int below = static_cast<int>(std::count_if(covered.begin(), covered.end(), [](int c) { return c < 17; }));
  std::ostringstream detail;
  detail << "min coverage " << *min_it << "/20 (" << names[static_cast<std::size_t>(min_it - covered.begin())]
         << "), " << below << " of " << covered.size() << " coefficients below 17/20, overall "
         << total_covered << "/" << total << "; max R-hat " << fmt("%.4f", worst_r_hat)
         << " (limit 1.05)";
  return {below == 0 && worst_r_hat < 1.05, detail.str()};
}

// ------------------------------------------------------------------ 6

Outcome g_formula_equivalence() {
  Philox4x32 rng(606, 0);
  std::uniform_int_distribution<int> reps(1, 4), yval(0, 9);
  const std::vector<double> prices = {0.1, 0.3};
  Dataset ds;
  ds.tariff_set = {{"A", 0.1}, {"B", 0.3}};
  ds.consumer_ids = {"c"};
  Timestamp ts = 0;
  // Every (price, hour, day, week) cell is filled, with a random number of
  // replicates so the (day, week) frequencies are unequal.
  for (int week = 1; week <= 3; ++week)
    for (int day = 0; day < 7; ++day) {
      const int n = reps(rng);
      for (int rep = 0; rep < n; ++rep)
        for (int hour = 0; hour < causal::kHours; ++hour)
          for (double p : prices) {
            FeatureRow r;
            r.consumer_id = "c";
            r.timestamp = ts++;
            r.hour = hour;
            r.day_of_week = day;
            r.week_of_year = week;
            r.price = p;
            r.consumption_kw = 0.1 * yval(rng) + 0.05 * hour * (p == 0.3 ? 0.5 : 1.0);
            ds.rows.push_back(r);
          }
    }

  causal::CausalOptions options;
  options.mode = causal::RegressionMode::exact_match;
  double worst = 0.0;
  for (double p : prices) {
    const auto effect = causal::g_formula_effect({"c", p}, ds, options);
    for (int hour = 0; hour < causal::kHours; ++hour) {
      // Brute force: sum_z mean(Y | x, hour, z) * freq(z), z = (day, week).
      double expected = 0.0;
      for (int week = 1; week <= 3; ++week)
        for (int day = 0; day < 7; ++day) {
          double sum = 0.0, n_cell = 0.0, n_z = 0.0;
          for (const auto& r : ds.rows) {
            if (r.day_of_week != day || r.week_of_year != week) continue;
            n_z += 1.0;
            if (r.price == p && r.hour == hour) {
              sum += r.consumption_kw;
              n_cell += 1.0;
            }
          }
          expected += sum / n_cell * n_z / static_cast<double>(ds.rows.size());
        }
      const auto& e = effect[static_cast<std::size_t>(hour)];
      worst = std::max(worst, e ? std::abs(e->e_y - expected) : INFINITY);
    }
  }
  return {worst <= 1e-9, "max |g-formula - brute force| = " + fmt("%.3g", worst) + " (limit 1e-9)"};
}

// ------------------------------------------------------------------ 7, 8

struct Pipeline {
  Dataset dataset;
  std::vector<causal::ElasticityProfile> profiles;
  std::vector<synth::GroundTruth> truth;
};

Pipeline run_synthetic(const std::vector<synth::SyntheticConsumerSpec>& specs,
                       causal::RegressionMode mode, std::uint64_t seed) {
  const auto schedule = synth::TariffSchedule::rotating(2);
  const auto files =
      synth::generate_population(specs, static_cast<int>(schedule.days()), schedule, seed);
  Pipeline p;
  p.dataset = engineer_features(
      aggregate_hourly(parse_meter_text(files.meter_csv, TariffMode::lcl)),
      parse_weather_text(files.weather_csv), TariffMode::lcl);
  if (p.dataset.dropped_rows != 0) throw DataError("synthetic data lost rows to weather staleness");
  causal::CausalOptions options;
  options.mode = mode;
  for (const auto& id : p.dataset.consumer_ids)
    p.profiles.push_back(causal::derive_elasticity(causal::estimate_consumer(p.dataset, id, options),
                                                   p.dataset.default_price(),
                                                   p.dataset.tariff_set));
  p.truth = synth::truth_from_json(files.truth_json);
  return p;
}

std::vector<synth::SyntheticConsumerSpec> oracle_population() {
  auto specs = synth::literal_population(10, -0.2, 0.15, "S");
  // Two price-insensitive controls give the pooled ranking something to beat.
  for (auto control : synth::literal_population(2, 0.0, 0.0, "C")) specs.push_back(control);
  return specs;
}

Outcome end_to_end() {
  const auto p = run_synthetic(oracle_population(), causal::RegressionMode::exact_match, 77);
  const auto report = synth::compare_truth(p.profiles, {}, p.truth);
  double worst_rmse = 0.0, worst_sign = 1.0;
  for (const auto& r : report) {
    worst_rmse = std::max(worst_rmse, r.elasticity_rmse);
    worst_sign = std::min(worst_sign, r.sign_agreement);
  }
  int hours_ok = 0, hours = 0;
  for (double price : {lcl::kHighRate, lcl::kLowRate}) {
    const auto model = scorer::build_pooled_model(p.profiles, price);
    auto config = mcmc::score_sampler_defaults();
    config.seed = 7;
    const auto score = scorer::sample_posterior(model, config);
    for (int h = 0; h < causal::kHours; ++h) {
      Eigen::Index best = 0;
      score.mean.col(h).maxCoeff(&best);
      hours_ok += score.outcomes[static_cast<std::size_t>(best)].front() == 'S';
      ++hours;
    }
  }
  std::ostringstream detail;
  detail << report.size() << " consumers, max elasticity RMSE " << fmt("%.3g", worst_rmse)
         << " (limit 0.05), min sign agreement " << fmt("%.3f", worst_sign)
         << ", pooled maximum held by an elastic consumer in " << hours_ok << "/" << hours
         << " hours";
  return {report.size() == 12 && worst_rmse < 0.05 && worst_sign == 1.0 && hours_ok == hours,
          detail.str()};
}

Outcome shape_fidelity() {
  const auto specs = synth::literal_population(3, -0.2, 0.15, "N", 0.02);
  const auto p = run_synthetic(specs, causal::RegressionMode::kernel, 88);
  bool ok = true;
  std::ostringstream detail;
  std::optional<glm::GlmDesign> first;
  for (const auto& profile : p.profiles) {
    const auto design = glm::build_design(profile, p.dataset);
    bool layout = design.rows.size() == 72 && design.prices.size() == 3 &&
                  design.prices[0] == p.dataset.default_price();
    for (std::size_t r = 0; layout && r < design.rows.size(); ++r)
      layout = design.rows[r].hour == static_cast<int>(r % 24) &&
               design.rows[r].price == design.prices[r / 24];
    ok = ok && layout;
    if (!first) first = design;
  }
  detail << p.profiles.size() << " designs of 72 rows in price blocks: " << (ok ? "yes" : "no");

  const auto weights = causal::rank_weights(p.profiles.front());
  const auto model = scorer::build_per_consumer_model(weights, 1.0, p.profiles.front().consumer_id);
  const auto score = scorer::sample_posterior(model, mcmc::score_sampler_defaults());
  const auto rows = scorer::summarize_scores(score, false);
  const auto by_hour = report::parse_csv(
      report::figure_files(score, report::FigureFamily::score_by_hour).front().contents);
  const bool score_ok = rows.size() == score.k() * 24 && by_hour.rows.size() == score.k() * 24;
  ok = ok && score_ok;
  detail << "; score rows " << rows.size() << " = " << score.k() << "x24";

  auto config = mcmc::glm_sampler_defaults();
  config.draws = 200;
  config.tune = 200;
  config.chains = 2;
  const auto post = glm::fit(*first, {}, config);
  const auto table = report::parse_csv(
      report::figure_files(post, report::FigureFamily::elasticity_vs_actual).front().contents);
  bool emission = table.rows.size() == 72 &&
                  table.header == std::vector<std::string>{"response_index", "modeled_mean", "actual"};
  for (std::size_t r = 0; emission && r < table.rows.size(); ++r)
    emission = std::stoul(table.rows[r][0]) == r && std::stod(table.rows[r][2]) == first->rows[r].y;
  ok = ok && emission;
  detail << "; elasticity_vs_actual rows " << table.rows.size() << (emission ? " in block order" : " out of order");
  return {ok, detail.str()};
}

// ------------------------------------------------------------------ 9, 10

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "--quiet");
  return cli::dispatch(args);
}

/// The full command-line pipeline inside `dir`, using relative paths only.
/// Returns the first failing exit code, or 0.
int cli_pipeline(const fs::path& dir) {
  fs::create_directories(dir);
  const fs::path previous = fs::current_path();
  fs::current_path(dir);
  int code = 0;
  const std::vector<std::vector<std::string>> steps = {
      {"synth", "--consumers", "2", "--weeks", "2", "--noise-sd", "0.02", "--seed", "5", "--out-dir", "syn"},
      {"ingest", "--meter", "syn/meter.csv", "--weather", "syn/weather.csv", "--out", "dataset.json"},
      {"causal", "--dataset", "dataset.json", "--out", "causal.json", "--weights-dir", "weights",
       "--pooled-price", "0.672"},
      {"score", "--weights", "weights/weights_S001.csv", "--mode", "per-consumer", "--seed", "7",
       "--out", "score.json", "--trace-out", "score.trace.csv"},
      {"score", "--weights", "weights/weights_pooled_0.672.csv", "--mode", "pooled", "--method",
       "conjugate", "--out", "pooled.json"},
      {"fit-glm", "--dataset", "dataset.json", "--causal", "causal.json", "--consumer", "S001",
       "--draws", "200", "--tune", "200", "--chains", "2", "--seed", "3", "--out", "glm.json"},
      {"predict", "--model", "glm.json", "--price", "0.25", "--hour", "10", "--out", "predict.json"},
      {"report", "--score", "score.json", "--trace", "score.trace.csv", "--out-dir", "fig_score"},
      {"report", "--model", "glm.json", "--price", "0.25", "--hour", "10", "--out-dir", "fig_glm"},
  };
  for (const auto& step : steps) {
    code = run_cli(step);
    if (code != 0) {
      std::fprintf(stderr, "  step '%s' exited %d\n", step.front().c_str(), code);
      break;
    }
  }
  fs::current_path(previous);
  return code;
}

std::vector<fs::path> manifests_in(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name == "manifest.json" || name.ends_with(".manifest.json")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

Outcome config_fidelity(const fs::path& root) {
  const auto score = mcmc::score_sampler_defaults();
  const auto fit = mcmc::glm_sampler_defaults();
  bool ok = score.draws == 5000 && score.tune == 1000 && score.chains == 4 && fit.draws == 2000 &&
            fit.tune == 1000 && fit.chains == 4;
  const fs::path dir = root / "config";
  fs::remove_all(dir);
  if (cli_pipeline(dir) != 0) return {false, "command-line pipeline failed"};
  const auto manifests = manifests_in(dir);
  int good = 0;
  for (const auto& m : manifests) {
    const json j = json::parse(read_file(m.string()));
    const auto& d = j.at("sampler_defaults");
    const bool has = d.at("score").at("draws") == 5000 && d.at("score").at("tune") == 1000 &&
                     d.at("score").at("chains") == 4 && d.at("fit-glm").at("draws") == 2000 &&
                     d.at("fit-glm").at("tune") == 1000 && d.at("fit-glm").at("chains") == 4;
    good += has;
  }
  // A score run without sampler flags must have sampled with the defaults.
  const json s = json::parse(read_file((dir / "score.json.manifest.json").string()));
  const bool used = s.at("sampler").at("draws") == 5000 && s.at("sampler").at("tune") == 1000 &&
                    s.at("sampler").at("chains") == 4;
  ok = ok && manifests.size() == 9 && good == static_cast<int>(manifests.size()) && used;
  return {ok, "library defaults 5000/1000/4 and 2000/1000/4; " + std::to_string(good) + "/" +
                  std::to_string(manifests.size()) + " manifests carry both; default score run used " +
                  (used ? "5000/1000/4" : "something else")};
}

Outcome determinism(const fs::path& root) {
  const fs::path a = root / "run_a", b = root / "run_b";
  fs::remove_all(a);
  fs::remove_all(b);
  if (cli_pipeline(a) != 0 || cli_pipeline(b) != 0) return {false, "command-line pipeline failed"};
  std::size_t files = 0, differ = 0, manifests = 0;
  std::string first_diff;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a);
    const fs::path other = b / rel;
    const std::string name = rel.filename().string();
    std::string x = read_file(e.path().string());
    std::string y = fs::exists(other) ? read_file(other.string()) : std::string("\x01missing");
    if (name == "manifest.json" || name.ends_with(".manifest.json")) {
      json jx = json::parse(x), jy = json::parse(y);
      jx.erase("wall_time_seconds");
      jy.erase("wall_time_seconds");
      x = jx.dump();
      y = jy.dump();
      ++manifests;
    } else {
      ++files;
    }
    if (x != y) {
      ++differ;
      if (first_diff.empty()) first_diff = rel.string();
    }
  }
  return {files > 0 && differ == 0,
          std::to_string(files) + " outputs and " + std::to_string(manifests) +
              " manifests compared, " + std::to_string(differ) + " differ" +
              (first_diff.empty() ? "" : " (first: " + first_diff + ")")};
}

}  // namespace

int main() {
  const fs::path root = fs::temp_directory_path() / "drm_acceptance";
  fs::create_directories(root);
  struct Criterion {
    int id;
    const char* name;
    double limit_seconds;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "conjugacy oracle", 300, conjugacy_oracle},
      {2, "marginal-likelihood normalization", 1, marginal_normalization},
      {3, "sampler validation", 30, sampler_validation},
      {4, "gradient checks", 10, gradient_checks},
      {5, "GLM recovery", 900, glm_recovery},
      {6, "g-formula brute-force equivalence", 1, g_formula_equivalence},
      {7, "end-to-end synthetic recovery", 600, end_to_end},
      {8, "shape fidelity", 0, shape_fidelity},
      {9, "config fidelity", 0, [&] { return config_fidelity(root); }},
      {10, "determinism", 0, [&] { return determinism(root); }},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::string timing = fmt("%.1f s", secs);
    if (c.limit_seconds > 0) {
      timing += fmt(" of %.0f s allowed", c.limit_seconds);
      if (secs > c.limit_seconds) out.pass = false;
    }
    failed += !out.pass;
    std::printf("criterion %2d %-36s %s  %s [%s]\n", c.id, c.name, out.pass ? "PASS" : "FAIL",
                out.detail.c_str(), timing.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
