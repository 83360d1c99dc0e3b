#include "drm/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <boost/crc.hpp>
#include <boost/version.hpp>
#include <nlohmann/json.hpp>

#include "drm/causal.hpp"
#include "drm/common.hpp"
#include "drm/figures.hpp"
#include "drm/glm.hpp"
#include "drm/ingest.hpp"
#include "drm/mcmc/sampler.hpp"
#include "drm/scorer.hpp"
#include "drm/synth.hpp"

namespace drm::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kSubcommands[] = {"ingest", "causal",  "score", "fit-glm",
                                        "predict", "report", "synth"};

/// Shared state of one invocation; everything in it ends up in the manifest.
struct Context {
  int verbosity = 1;
  json inputs = json::array();
  json outputs = json::array();
  json results = json::object();
  json sampler;  // resolved sampler config, when the subcommand samples
  std::optional<std::uint64_t> seed;
  std::string default_manifest;

  void log(int level, const std::string& message) const {
    if (level <= verbosity) std::cerr << message << '\n';
  }

  std::string read(const std::string& path) {
    std::string text = read_file(path);
    boost::crc_32_type crc;
    crc.process_bytes(text.data(), text.size());
    char hex[9];
    std::snprintf(hex, sizeof hex, "%08x", static_cast<unsigned>(crc.checksum()));
    inputs.push_back({{"path", path}, {"bytes", text.size()}, {"crc32", hex}});
    return text;
  }

  void write(const std::string& path, std::string_view contents) {
    const fs::path parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
    write_file_atomic(path, contents);
    outputs.push_back(path);
    log(2, "wrote " + path);
  }
};

struct SamplerFlags {
  std::optional<std::size_t> draws, tune, chains;
  std::optional<std::uint64_t> seed;
  std::optional<double> target_accept;
  std::optional<int> max_tree_depth;
  std::optional<std::string> metric;

  void add_to(CLI::App* sub) {
    sub->add_option("--draws", draws, "Kept draws per chain");
    sub->add_option("--tune", tune, "Tuning draws per chain");
    sub->add_option("--chains", chains, "Number of chains");
    sub->add_option("--seed", seed, "Base seed");
    sub->add_option("--target-accept", target_accept, "Step size adaptation target");
    sub->add_option("--max-tree-depth", max_tree_depth, "NUTS tree depth limit");
    sub->add_option("--metric", metric, "Mass matrix: diagonal or dense")
        ->check(CLI::IsMember({"diagonal", "dense"}));
  }

  mcmc::SamplerConfig resolve(mcmc::SamplerConfig c) const {
    if (draws) c.draws = *draws;
    if (tune) c.tune = *tune;
    if (chains) c.chains = *chains;
    if (seed) c.seed = *seed;
    if (target_accept) c.target_accept = *target_accept;
    if (max_tree_depth) c.max_tree_depth = *max_tree_depth;
    if (metric) c.metric = *metric == "dense" ? mcmc::MetricKind::dense : mcmc::MetricKind::diagonal;
    c.validate();
    return c;
  }
};

std::string manifest_beside(const std::string& path) { return path + ".manifest.json"; }

/// Profiles for every consumer in a causal JSON, derived with the dataset's
/// tariff levels.
std::vector<causal::ElasticityProfile> profiles_from(const std::vector<causal::CausalEstimate>& estimates,
                                                     const Dataset& dataset) {
  std::map<std::string, std::vector<causal::CausalEstimate>> by_consumer;
  for (const auto& e : estimates) by_consumer[e.consumer_id].push_back(e);
  std::vector<causal::ElasticityProfile> out;
  for (const auto& [id, list] : by_consumer)
    out.push_back(causal::derive_elasticity(list, dataset.default_price(), dataset.tariff_set));
  return out;
}

std::string sanitize(std::string s) {
  for (char& c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '.' && c != '-') c = '-';
  return s;
}

glm::GlmPosterior load_posterior(Context& ctx, const std::string& model_path) {
  const std::string text = ctx.read(model_path);
  fs::path ref = glm::trace_ref_from_json(text);
  if (ref.is_relative()) ref = fs::path(model_path).parent_path() / ref;
  const auto trace = mcmc::trace_from_csv(ctx.read(ref.string()));
  return glm::posterior_from_json(text, trace);
}

// ---------------------------------------------------------------- ingest

struct IngestArgs {
  std::string meter, weather, out, tariff_mode = "lcl";
};

void add_ingest(CLI::App& app, IngestArgs& a, std::function<void(Context&)>& run) {
  auto* sub = app.add_subcommand("ingest", "Parse meter and weather files into a feature dataset");
  sub->add_option("--meter", a.meter, "Half-hourly meter CSV")->required();
  sub->add_option("--weather", a.weather, "Hourly weather CSV")->required();
  sub->add_option("--tariff-mode", a.tariff_mode, "lcl (Default/High/Low labels) or generic (prices)")
      ->check(CLI::IsMember({"lcl", "generic"}))
      ->capture_default_str();
  sub->add_option("--out", a.out, "Dataset JSON")->required();
  sub->callback([&a, &run] {
    run = [&a](Context& ctx) {
      ctx.default_manifest = manifest_beside(a.out);
      const TariffMode mode = a.tariff_mode == "lcl" ? TariffMode::lcl : TariffMode::generic;
      const auto meter = parse_meter_text(ctx.read(a.meter), mode, a.meter);
      const auto weather = parse_weather_text(ctx.read(a.weather), a.weather);
      const auto dataset = engineer_features(aggregate_hourly(meter), weather, mode);
      if (dataset.dropped_rows > 0)
        ctx.log(1, "dropped " + std::to_string(dataset.dropped_rows) +
                       " hourly rows without weather within 3 h");
      ctx.results = {{"consumers", dataset.consumer_ids.size()},
                     {"rows", dataset.rows.size()},
                     {"dropped_rows", dataset.dropped_rows}};
      ctx.write(a.out, dataset_to_json(dataset));
    };
  });
}

// ---------------------------------------------------------------- causal

struct CausalArgs {
  std::string dataset, out, weights_dir, regression = "kernel";
  std::vector<std::string> consumers;
  std::vector<double> pooled_prices;
  double ci = 0.95;
  std::optional<double> bandwidth;
  int scale_max = 100;
};

void add_causal(CLI::App& app, CausalArgs& a, std::function<void(Context&)>& run) {
  auto* sub = app.add_subcommand("causal", "Interventional consumption, elasticities and rank weights");
  sub->add_option("--dataset", a.dataset, "Dataset JSON from ingest")->required();
  sub->add_option("--regression", a.regression, "kernel or exact")
      ->check(CLI::IsMember({"kernel", "exact"}))
      ->capture_default_str();
  sub->add_option("--ci", a.ci, "Interval level")->check(CLI::Range(0.0, 1.0))->capture_default_str();
  sub->add_option("--bandwidth", a.bandwidth, "Kernel bandwidth in standardized units");
  sub->add_option("--consumer", a.consumers, "Restrict to these consumers")->take_all()->delimiter(',');
  sub->add_option("--scale-max", a.scale_max, "Largest rank weight")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sub->add_option("--out", a.out, "Causal estimates JSON")->required();
  sub->add_option("--weights-dir", a.weights_dir, "Directory for rank weight CSVs");
  sub->add_option("--pooled-price", a.pooled_prices, "Also write pooled weights at these prices")
      ->take_all()
      ->delimiter(',');
  sub->callback([&a, &run] {
    run = [&a](Context& ctx) {
      ctx.default_manifest = manifest_beside(a.out);
      const Dataset ds = dataset_from_json(ctx.read(a.dataset));
      causal::CausalOptions options;
      options.mode = a.regression == "exact" ? causal::RegressionMode::exact_match
                                             : causal::RegressionMode::kernel;
      options.ci = a.ci;
      options.bandwidth = a.bandwidth;
      std::vector<std::string> ids = a.consumers.empty() ? ds.consumer_ids : a.consumers;
      std::vector<causal::CausalEstimate> all;
      std::vector<causal::ElasticityProfile> profiles;
      for (const auto& id : ids) {
        if (!std::binary_search(ds.consumer_ids.begin(), ds.consumer_ids.end(), id))
          throw DataError("consumer " + id + " is not in the dataset");
        auto est = causal::estimate_consumer(ds, id, options);
        profiles.push_back(causal::derive_elasticity(est, ds.default_price(), ds.tariff_set));
        all.insert(all.end(), est.begin(), est.end());
        ctx.log(2, "estimated " + id);
      }
      ctx.results = {{"consumers", ids.size()}, {"estimates", all.size()}};
      ctx.write(a.out, causal::causal_to_json(all, profiles));
      if (a.weights_dir.empty()) {
        if (!a.pooled_prices.empty()) throw std::invalid_argument("--pooled-price needs --weights-dir");
        return;
      }
      for (const auto& p : profiles)
        ctx.write((fs::path(a.weights_dir) / ("weights_" + sanitize(p.consumer_id) + ".csv")).string(),
                  causal::weights_to_csv(causal::rank_weights(p, a.scale_max)));
      for (double price : a.pooled_prices)
        ctx.write(
            (fs::path(a.weights_dir) / ("weights_pooled_" + sanitize(format_double(price)) + ".csv"))
                .string(),
            causal::weights_to_csv(causal::rank_weights_pooled(profiles, price, a.scale_max)));
    };
  });
}

// ---------------------------------------------------------------- score

struct ScoreArgs {
  std::string weights, out, trace_out, mode = "per-consumer", method = "nuts";
  std::optional<std::string> subject;
  double alpha = 1.0;
  SamplerFlags sampler;
};

void add_score(CLI::App& app, ScoreArgs& a, std::function<void(Context&)>& run) {
  auto* sub = app.add_subcommand("score", "Dirichlet-multinomial response probability scores");
  sub->add_option("--weights", a.weights, "Rank weight CSV")->required();
  sub->add_option("--mode", a.mode, "per-consumer or pooled")
      ->check(CLI::IsMember({"per-consumer", "pooled"}))
      ->capture_default_str();
  sub->add_option("--alpha", a.alpha, "Dirichlet pseudo-count")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sub->add_option("--method", a.method, "nuts or conjugate")
      ->check(CLI::IsMember({"nuts", "conjugate"}))
      ->capture_default_str();
  sub->add_option("--subject", a.subject, "Consumer id recorded in the score");
  a.sampler.add_to(sub);
  sub->add_option("--out", a.out, "Score JSON")->required();
  sub->add_option("--trace-out", a.trace_out, "Combined trace CSV");
  sub->callback([&a, &run] {
    run = [&a](Context& ctx) {
      ctx.default_manifest = manifest_beside(a.out);
      const auto config = a.sampler.resolve(mcmc::score_sampler_defaults());
      ctx.sampler = mcmc::config_to_json(config);
      ctx.seed = config.seed;
      const auto weights = causal::weights_from_csv(ctx.read(a.weights));
      scorer::DirichletMultinomialModel model;
      if (scorer::mode_from_string(a.mode) == scorer::Mode::pooled) {
        model = scorer::build_pooled_model(weights, a.alpha);
      } else {
        std::string subject = a.subject.value_or(fs::path(a.weights).stem().string());
        if (!a.subject && subject.rfind("weights_", 0) == 0) subject.erase(0, 8);
        model = scorer::build_per_consumer_model(weights, a.alpha, subject);
      }
      const auto score =
          scorer::sample_posterior(model, config, scorer::method_from_string(a.method));
      for (const auto& w : score.warnings) ctx.log(1, "warning: " + w);
      ctx.results = {{"outcomes", score.k()},
                     {"max_r_hat", score.max_r_hat},
                     {"min_ess", score.min_ess},
                     {"divergences", score.divergences}};
      ctx.write(a.out, scorer::score_to_json(score));
      if (!a.trace_out.empty())
        ctx.write(a.trace_out, mcmc::trace_to_csv(scorer::combined_trace(score)));
    };
  });
}

// ---------------------------------------------------------------- fit-glm

struct FitArgs {
  std::string dataset, causal, consumer, out, trace_out, likelihood = "student-t";
  bool separate_cubic = false;
  std::optional<double> prior_sd, nu_lo, nu_hi, sigma_rate;
  SamplerFlags sampler;
};

void add_fit(CLI::App& app, FitArgs& a, std::function<void(Context&)>& run) {
  auto* sub = app.add_subcommand("fit-glm", "Bayesian elasticity regression for one consumer");
  sub->add_option("--dataset", a.dataset, "Dataset JSON from ingest")->required();
  sub->add_option("--causal", a.causal, "Causal JSON from causal")->required();
  sub->add_option("--consumer", a.consumer, "Consumer id")->required();
  sub->add_option("--likelihood", a.likelihood, "student-t or normal")
      ->check(CLI::IsMember({"student-t", "normal"}))
      ->capture_default_str();
  sub->add_flag("--separate-cubic", a.separate_cubic, "Independent coefficient for price^3");
  sub->add_option("--prior-sd", a.prior_sd, "Standard deviation of every normal prior");
  sub->add_option("--nu-lo", a.nu_lo, "Lower bound of the uniform prior on nu");
  sub->add_option("--nu-hi", a.nu_hi, "Upper bound of the uniform prior on nu");
  sub->add_option("--sigma-rate", a.sigma_rate, "Rate of the exponential prior on sigma");
  a.sampler.add_to(sub);
  sub->add_option("--out", a.out, "Posterior JSON")->required();
  sub->add_option("--trace-out", a.trace_out, "Trace CSV (default: <out>.trace.csv)");
  sub->callback([&a, &run] {
    run = [&a](Context& ctx) {
      ctx.default_manifest = manifest_beside(a.out);
      const auto config = a.sampler.resolve(mcmc::glm_sampler_defaults());
      ctx.sampler = mcmc::config_to_json(config);
      ctx.seed = config.seed;
      glm::PriorSpec priors;
      if (a.prior_sd)
        for (auto* p : {&priors.beta0, &priors.beta1, &priors.beta2, &priors.th, &priors.tl,
                        &priors.ta, &priors.yavg, &priors.ydiff})
          p->sd = *a.prior_sd;
      if (a.nu_lo) priors.nu_lo = *a.nu_lo;
      if (a.nu_hi) priors.nu_hi = *a.nu_hi;
      if (a.sigma_rate) priors.sigma_rate = *a.sigma_rate;
      priors.validate();
      glm::GlmOptions options;
      options.separate_cubic = a.separate_cubic;
      options.likelihood =
          a.likelihood == "normal" ? glm::Likelihood::normal : glm::Likelihood::student_t;

      const Dataset ds = dataset_from_json(ctx.read(a.dataset));
      std::vector<causal::CausalEstimate> mine;
      for (auto& e : causal::causal_from_json(ctx.read(a.causal)))
        if (e.consumer_id == a.consumer) mine.push_back(std::move(e));
      if (mine.empty()) throw DataError("no causal estimates for consumer " + a.consumer);
      const auto profile = causal::derive_elasticity(mine, ds.default_price(), ds.tariff_set);
      const auto design = glm::build_design(profile, ds);
      for (const auto& c : design.degenerate_columns)
        ctx.log(1, "warning: regressor " + c + " is constant and standardizes to 0");

      const auto post = glm::fit(design, priors, config, options);
      for (const auto& w : post.warnings) ctx.log(1, "warning: " + w);
      const std::string trace_path = a.trace_out.empty() ? a.out + ".trace.csv" : a.trace_out;
      const fs::path model_dir = fs::path(a.out).parent_path();
      const std::string ref = fs::path(trace_path).parent_path() == model_dir
                                  ? fs::path(trace_path).filename().string()
                                  : fs::absolute(trace_path).string();
      ctx.results = {{"rows", design.rows.size()},
                     {"parameters", post.layout.size()},
                     {"max_r_hat", post.summary.max_r_hat()},
                     {"min_ess", post.summary.min_ess()},
                     {"divergences", post.summary.divergences}};
      ctx.write(trace_path, mcmc::trace_to_csv(post.trace));
      ctx.write(a.out, glm::posterior_to_json(post, ref));
    };
  });
}

// ---------------------------------------------------------------- predict

struct PredictArgs {
  std::string model, out;
  double price = 0.0;
  int hour = 0;
  std::uint64_t seed = 0;
  std::optional<double> temp_high, temp_low, temp_avg, consumption_avg, consumption_difference;
};

/// Covariates left unspecified default to their mean over the design rows
/// of the same hour.
glm::Covariates default_covariates(const glm::GlmDesign& design, int hour) {
  glm::Covariates c;
  std::size_t n = 0;
  for (const auto& r : design.rows) {
    if (r.hour != hour) continue;
    c.temp_high += r.temp_high;
    c.temp_low += r.temp_low;
    c.temp_avg += r.temp_avg;
    c.consumption_avg += r.consumption_avg;
    c.consumption_difference += r.consumption_difference;
    ++n;
  }
  if (n == 0) throw DataError("design has no rows at hour " + std::to_string(hour));
  const double k = 1.0 / static_cast<double>(n);
  for (double* v : {&c.temp_high, &c.temp_low, &c.temp_avg, &c.consumption_avg,
                    &c.consumption_difference})
    *v *= k;
  return c;
}

void add_predict(CLI::App& app, PredictArgs& a, std::function<void(Context&)>& run) {
  auto* sub = app.add_subcommand("predict", "Posterior predictive elasticity at any price and hour");
  sub->add_option("--model", a.model, "Posterior JSON from fit-glm")->required();
  sub->add_option("--price", a.price, "Price in GBP/kWh")->required()->check(CLI::PositiveNumber);
  sub->add_option("--hour", a.hour, "Hour of day")->required()->check(CLI::Range(0, 23));
  sub->add_option("--seed", a.seed, "Seed of the predictive noise")->capture_default_str();
  sub->add_option("--temp-high", a.temp_high);
  sub->add_option("--temp-low", a.temp_low);
  sub->add_option("--temp-avg", a.temp_avg);
  sub->add_option("--consumption-avg", a.consumption_avg, "kW");
  sub->add_option("--consumption-difference", a.consumption_difference, "kW");
  sub->add_option("--out", a.out, "Prediction JSON (default: stdout)");
  sub->callback([&a, &run] {
    run = [&a](Context& ctx) {
      ctx.default_manifest = a.out.empty() ? "predict.manifest.json" : manifest_beside(a.out);
      ctx.seed = a.seed;
      const auto post = load_posterior(ctx, a.model);
      glm::Covariates cov = default_covariates(post.design, a.hour);
      if (a.temp_high) cov.temp_high = *a.temp_high;
      if (a.temp_low) cov.temp_low = *a.temp_low;
      if (a.temp_avg) cov.temp_avg = *a.temp_avg;
      if (a.consumption_avg) cov.consumption_avg = *a.consumption_avg;
      if (a.consumption_difference) cov.consumption_difference = *a.consumption_difference;
      ctx.results = {{"covariates",
                      {{"temp_high", cov.temp_high},
                       {"temp_low", cov.temp_low},
                       {"temp_avg", cov.temp_avg},
                       {"consumption_avg", cov.consumption_avg},
                       {"consumption_difference", cov.consumption_difference}}}};
      const auto pred = glm::predict_elasticity(post, a.price, a.hour, cov, a.seed);
      const std::string text = glm::prediction_to_json(pred);
      if (a.out.empty())
        std::cout << text;
      else
        ctx.write(a.out, text);
    };
  });
}

// ---------------------------------------------------------------- report

struct ReportArgs {
  std::string score, trace, model, out_dir;
  std::vector<std::string> families;
  std::optional<double> price;
  std::optional<int> hour;
  std::vector<double> price_grid;
  std::size_t n_lines = 100, kde_points = 256;
  std::uint64_t seed = 0;
};

void add_report(CLI::App& app, ReportArgs& a, std::function<void(Context&)>& run) {
  auto* sub = app.add_subcommand("report", "Figure data CSVs for scores and behaviour models");
  auto* score = sub->add_option("--score", a.score, "Score JSON");
  auto* model = sub->add_option("--model", a.model, "Posterior JSON");
  score->excludes(model);
  sub->add_option("--trace", a.trace, "Combined score trace CSV (needed for score_density)")
      ->needs(score);
  sub->add_option("--family", a.families, "Figure families (default: every applicable one)")
      ->take_all()
      ->delimiter(',');
  sub->add_option("--price", a.price, "Price for predictive_density")->needs(model);
  sub->add_option("--hour", a.hour, "Hour for predictive_density")
      ->needs(model)
      ->check(CLI::Range(0, 23));
  sub->add_option("--seed", a.seed, "Seed for predictive_density")->capture_default_str();
  sub->add_option("--price-grid", a.price_grid, "Prices for regression_lines")
      ->take_all()
      ->delimiter(',');
  sub->add_option("--n-lines", a.n_lines, "Regression lines per file")->capture_default_str();
  sub->add_option("--kde-points", a.kde_points, "Density grid size")->capture_default_str();
  sub->add_option("--out-dir", a.out_dir, "Output directory")->required();
  sub->callback([&a, &run] {
    run = [&a](Context& ctx) {
      ctx.default_manifest = (fs::path(a.out_dir) / "manifest.json").string();
      if (a.score.empty() && a.model.empty()) throw std::invalid_argument("report needs --score or --model");
      report::FigureOptions options;
      options.price_grid = a.price_grid;
      options.n_lines = a.n_lines;
      options.kde_points = a.kde_points;
      std::vector<report::FigureFamily> families;
      for (const auto& f : a.families) families.push_back(report::family_from_string(f));
      std::vector<report::FigureFile> files;
      auto append = [&files](std::vector<report::FigureFile> more) {
        for (auto& f : more) files.push_back(std::move(f));
      };
      if (!a.score.empty()) {
        auto score = scorer::score_from_json(ctx.read(a.score));
        if (!a.trace.empty()) scorer::attach_combined_trace(score, mcmc::trace_from_csv(ctx.read(a.trace)));
        if (families.empty()) {
          families.push_back(report::FigureFamily::score_by_hour);
          if (!a.trace.empty()) families.push_back(report::FigureFamily::score_density);
        }
        for (auto f : families) append(report::figure_files(score, f, options));
      } else {
        const auto post = load_posterior(ctx, a.model);
        const bool predictive = a.price && a.hour;
        if ((a.price.has_value()) != (a.hour.has_value()))
          throw std::invalid_argument("predictive_density needs both --price and --hour");
        if (families.empty()) {
          families = {report::FigureFamily::glm_marginals, report::FigureFamily::regression_lines,
                      report::FigureFamily::elasticity_vs_actual};
          if (predictive) families.push_back(report::FigureFamily::predictive_density);
        }
        for (auto f : families) {
          if (f == report::FigureFamily::predictive_density) {
            if (!predictive) throw std::invalid_argument("predictive_density needs --price and --hour");
            ctx.seed = a.seed;
            const auto pred = glm::predict_elasticity(post, *a.price, *a.hour,
                                                      default_covariates(post.design, *a.hour), a.seed);
            append(report::figure_files(pred, post.design.consumer_id, f, options));
          } else {
            append(report::figure_files(post, f, options));
          }
        }
      }
      std::set<std::string> names;
      for (const auto& f : files) {
        if (!names.insert(f.name).second) throw std::invalid_argument("figure " + f.name + " requested twice");
        ctx.write((fs::path(a.out_dir) / f.name).string(), f.contents);
      }
    };
  });
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  std::string out_dir, schedule = "rotating", start = "2013-01-07T00:00Z";
  int consumers = 10, weeks = 2;
  std::optional<int> days;
  double high = -0.2, low = 0.15, noise_sd = 0.0;
  std::uint64_t seed = 0;
  // compare mode
  std::string truth, causal, dataset;
  std::vector<std::string> scores;
};

void add_synth(CLI::App& app, SynthArgs& a, std::function<void(Context&)>& run) {
  auto* sub = app.add_subcommand(
      "synth", "Generate a synthetic population, or compare pipeline output with its truth");
  sub->add_option("--consumers", a.consumers, "Population size")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sub->add_option("--high", a.high, "Elasticity at the High rate")->capture_default_str();
  sub->add_option("--low", a.low, "Elasticity at the Low rate")->capture_default_str();
  sub->add_option("--noise-sd", a.noise_sd, "Consumption noise, kW")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  sub->add_option("--schedule", a.schedule, "rotating or random")
      ->check(CLI::IsMember({"rotating", "random"}))
      ->capture_default_str();
  sub->add_option("--weeks", a.weeks, "ISO weeks per year (rotating)")
      ->check(CLI::Range(1, 52))
      ->capture_default_str();
  sub->add_option("--start", a.start, "First day (random)")->capture_default_str();
  sub->add_option("--days", a.days, "Days to generate (default: the whole schedule, 28 for random)");
  sub->add_option("--seed", a.seed, "Seed")->capture_default_str();
  sub->add_option("--truth", a.truth, "Ground-truth JSON; switches to compare mode");
  sub->add_option("--causal", a.causal, "Causal JSON to compare");
  sub->add_option("--dataset", a.dataset, "Dataset JSON the causal run used");
  sub->add_option("--score", a.scores, "Score JSONs to compare")->take_all()->delimiter(',');
  sub->add_option("--out-dir", a.out_dir, "Output directory")->required();
  sub->callback([&a, &run] {
    run = [&a](Context& ctx) {
      ctx.default_manifest = (fs::path(a.out_dir) / "manifest.json").string();
      const fs::path dir(a.out_dir);
      if (!a.truth.empty()) {
        const auto truth = synth::truth_from_json(ctx.read(a.truth));
        std::vector<causal::ElasticityProfile> profiles;
        if (!a.causal.empty()) {
          if (a.dataset.empty()) throw std::invalid_argument("--causal needs --dataset");
          const Dataset ds = dataset_from_json(ctx.read(a.dataset));
          profiles = profiles_from(causal::causal_from_json(ctx.read(a.causal)), ds);
        }
        std::vector<scorer::ResponseScore> scores;
        for (const auto& s : a.scores) scores.push_back(scorer::score_from_json(ctx.read(s)));
        const auto report = synth::compare_truth(profiles, scores, truth);
        ctx.results = {{"consumers", report.size()}};
        ctx.write((dir / "recovery.json").string(), synth::recovery_to_json(report));
        return;
      }
      ctx.seed = a.seed;
      const auto schedule = a.schedule == "rotating"
                                ? synth::TariffSchedule::rotating(a.weeks)
                                : synth::TariffSchedule::random_events(parse_iso8601(a.start),
                                                                       a.days.value_or(28), a.seed);
      const int days = a.days.value_or(static_cast<int>(schedule.days()));
      const auto specs = synth::literal_population(a.consumers, a.high, a.low, "S", a.noise_sd);
      const auto files = synth::generate_population(specs, days, schedule, a.seed);
      ctx.results = {{"consumers", specs.size()}, {"days", days}};
      ctx.write((dir / "meter.csv").string(), files.meter_csv);
      ctx.write((dir / "weather.csv").string(), files.weather_csv);
      ctx.write((dir / "truth.json").string(), files.truth_json);
    };
  });
}

// ---------------------------------------------------------------- manifest

json option_values(const CLI::App& sub) {
  json out = json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt->get_lnames().empty() || opt->get_lnames().front() == "help") continue;
    const std::string& name = opt->get_lnames().front();
    if (opt->count() > 0) {
      const auto& r = opt->results();
      out[name] = r.size() == 1 ? json(r.front()) : json(r);
    } else if (!opt->get_default_str().empty()) {
      out[name] = opt->get_default_str();
    } else {
      out[name] = nullptr;
    }
  }
  return out;
}

json versions() {
  return {{"drm", kVersion},
          {"compiler", __VERSION__},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                        "." + std::to_string(EIGEN_MINOR_VERSION)},
          {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
          {"boost", BOOST_LIB_VERSION},
          {"cli11", CLI11_VERSION}};
}

bool mentioned(const std::vector<std::string>& args, const std::string& flag) {
  for (const auto& a : args)
    if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
  return false;
}

}  // namespace

std::map<std::string, std::string> parse_config_text(std::string_view text) {
  std::map<std::string, std::string> out;
  std::istringstream in{std::string(text)};
  std::string line;
  int number = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++number;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(number) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.rfind("--", 0) == 0) key.erase(0, 2);
    if (key.empty())
      throw std::invalid_argument("config line " + std::to_string(number) + ": empty key");
    if (!out.emplace(key, value).second)
      throw std::invalid_argument("config line " + std::to_string(number) + ": repeated key " + key);
  }
  return out;
}

int dispatch(const std::vector<std::string>& args_in) {
  CLI::App app{"Demand response modelling pipeline: ingest, causal effects, response scores, "
               "elasticity regression, reports and synthetic validation data.",
               "drm"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path, manifest_path;
  std::optional<std::size_t> threads;
  int verbose = 0;
  bool quiet = false;
  app.add_option("--config", config_path, "key = value file supplying defaults; flags win");
  app.add_option("--manifest", manifest_path, "Manifest path (default: beside the primary output)");
  app.add_option("--threads", threads, "Worker threads (default: DRM_THREADS or all cores)")
      ->check(CLI::PositiveNumber);
  app.add_flag("-v,--verbose", verbose, "More log output");
  app.add_flag("-q,--quiet", quiet, "Errors only");

  std::function<void(Context&)> run;
  IngestArgs ingest;
  CausalArgs causal_args;
  ScoreArgs score;
  FitArgs fit_args;
  PredictArgs predict;
  ReportArgs report_args;
  SynthArgs synth_args;
  add_ingest(app, ingest, run);
  add_causal(app, causal_args, run);
  add_score(app, score, run);
  add_fit(app, fit_args, run);
  add_predict(app, predict, run);
  add_report(app, report_args, run);
  add_synth(app, synth_args, run);

  if (args_in.empty()) {
    std::cerr << app.help();
    return kExitUsage;
  }

  // Config entries become flags placed before the user's own, skipping any
  // the user gave explicitly.
  std::vector<std::string> args = args_in;
  CLI::App* selected = nullptr;
  std::size_t sub_pos = 0;
  for (std::size_t i = 0; i < args.size() && !selected; ++i)
    for (const char* name : kSubcommands)
      if (args[i] == name) {
        selected = app.get_subcommand(name);
        sub_pos = i;
      }
  std::string config_file;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config_file = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) config_file = args[i].substr(9);
  }
  if (!config_file.empty() && selected) {
    try {
      std::vector<std::string> injected;
      for (const auto& [key, value] : parse_config_text(read_file(config_file))) {
        const std::string flag = "--" + key;
        if (key == "config") throw std::invalid_argument("config files cannot include others");
        const bool known_here = selected->get_option_no_throw(flag) || app.get_option_no_throw(flag);
        if (!known_here) {
          bool elsewhere = false;
          for (const char* name : kSubcommands)
            elsewhere = elsewhere || app.get_subcommand(name)->get_option_no_throw(flag) != nullptr;
          if (!elsewhere) throw std::invalid_argument("unknown config key '" + key + "'");
          continue;
        }
        if (!mentioned(args, flag)) injected.push_back(flag + "=" + value);
      }
      args.insert(args.begin() + static_cast<std::ptrdiff_t>(sub_pos) + 1, injected.begin(),
                  injected.end());
    } catch (const std::exception& e) {
      std::cerr << "drm: " << config_file << ": " << e.what() << '\n';
      return kExitUsage;
    }
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "drm: " << e.what() << "\n\n";
    const CLI::App* sub = selected ? selected : &app;
    std::cerr << sub->help();
    return kExitUsage;
  }

  if (threads) setenv("DRM_THREADS", std::to_string(*threads).c_str(), 1);

  Context ctx;
  ctx.verbosity = quiet ? 0 : 1 + verbose;
  const auto started = std::chrono::steady_clock::now();
  int code = kExitOk;
  std::string error;
  try {
    run(ctx);
  } catch (const ConvergenceError& e) {
    code = kExitConvergence;
    error = e.what();
  } catch (const std::invalid_argument& e) {
    code = kExitUsage;
    error = e.what();
  } catch (const std::exception& e) {
    code = kExitData;
    error = e.what();
  }
  if (code != kExitOk) std::cerr << "drm " << selected->get_name() << ": " << error << '\n';
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

  json manifest = {{"schema_version", kManifestSchemaVersion},
                   {"subcommand", selected->get_name()},
                   {"argv", args_in},
                   {"config_file", config_file.empty() ? json(nullptr) : json(config_file)},
                   {"inputs", ctx.inputs},
                   {"outputs", ctx.outputs},
                   {"config", option_values(*selected)},
                   {"sampler", ctx.sampler.is_null() ? json(nullptr) : ctx.sampler},
                   {"sampler_defaults",
                    {{"score", mcmc::config_to_json(mcmc::score_sampler_defaults())},
                     {"fit-glm", mcmc::config_to_json(mcmc::glm_sampler_defaults())}}},
                   {"seed", ctx.seed ? json(*ctx.seed) : json(nullptr)},
                   {"threads", default_thread_count()},
                   {"versions", versions()},
                   {"results", ctx.results},
                   {"exit_code", code},
                   {"error", error.empty() ? json(nullptr) : json(error)},
                   {"wall_time_seconds", wall}};
  const std::string path = manifest_path.empty() ? ctx.default_manifest : manifest_path;
  if (!path.empty()) {
    try {
      const fs::path parent = fs::path(path).parent_path();
      if (!parent.empty()) fs::create_directories(parent);
      write_file_atomic(path, manifest.dump(2) + "\n");
    } catch (const std::exception& e) {
      std::cerr << "drm: cannot write manifest " << path << ": " << e.what() << '\n';
      if (code == kExitOk) code = kExitData;
    }
  }
  return code;
}

int dispatch(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return dispatch(args);
}

}  // namespace drm::cli
