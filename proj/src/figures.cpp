#include "drm/figures.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <stdexcept>

#include "drm/common.hpp"
#include "drm/diagnostics.hpp"

namespace drm::report {

namespace {

constexpr std::pair<FigureFamily, const char*> kFamilies[] = {
    {FigureFamily::score_density, "score_density"},
    {FigureFamily::score_by_hour, "score_by_hour"},
    {FigureFamily::glm_marginals, "glm_marginals"},
    {FigureFamily::regression_lines, "regression_lines"},
    {FigureFamily::elasticity_vs_actual, "elasticity_vs_actual"},
    {FigureFamily::predictive_density, "predictive_density"},
};

void expect(bool ok, FigureFamily family, const char* input) {
  if (!ok)
    throw std::invalid_argument("figure family " + to_string(family) + " does not apply to " +
                                input);
}

std::string sanitize(std::string_view s) {
  std::string out(s);
  for (char& c : out)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '.' && c != '-') c = '-';
  return out;
}

std::string join(std::initializer_list<std::string> fields) {
  std::string out;
  for (const auto& f : fields) {
    if (!out.empty()) out += ',';
    out += f;
  }
  out += '\n';
  return out;
}

std::string num(double x) { return format_double(x); }

}  // namespace

std::string to_string(FigureFamily family) {
  for (const auto& [f, name] : kFamilies)
    if (f == family) return name;
  throw std::invalid_argument("unknown figure family");
}

FigureFamily family_from_string(std::string_view text) {
  for (const auto& [f, name] : kFamilies)
    if (text == name) return f;
  throw std::invalid_argument("unknown figure family '" + std::string(text) + "'");
}

std::string figure_file_name(FigureFamily family, std::string_view subject,
                             std::optional<std::string_view> price) {
  std::string name = to_string(family) + "_" + sanitize(subject);
  if (price) name += "_" + sanitize(*price);
  return name + ".csv";
}

std::vector<FigureFile> figure_files(const scorer::ResponseScore& score, FigureFamily family,
                                     const FigureOptions& options) {
  expect(family == FigureFamily::score_density || family == FigureFamily::score_by_hour, family,
         "a response score");
  if (score.k() == 0) throw DataError("response score is empty");
  const std::string subject = score.subject.empty() ? "score" : score.subject;
  const auto price = score.price ? std::optional<std::string>(num(*score.price)) : std::nullopt;
  FigureFile file;
  file.name = figure_file_name(family, subject,
                               price ? std::optional<std::string_view>(*price) : std::nullopt);

  if (family == FigureFamily::score_by_hour) {
    file.contents = "outcome,hour,mean,hpd5,hpd95\n";
    for (const auto& r : scorer::summarize_scores(score, false))
      file.contents += join({r.outcome, std::to_string(r.hour), num(r.mean), num(r.hpd5),
                             num(r.hpd95)});
    return {file};
  }

  if (score.traces.size() != causal::kHours)
    throw DataError("score_density needs the sampled traces");
  file.contents = "outcome,hour,x,density,degenerate\n";
  for (std::size_t i = 0; i < score.k(); ++i) {
    for (int h = 0; h < causal::kHours; ++h) {
      const auto draws = score.traces[static_cast<std::size_t>(h)].pooled_draws(i);
      const auto curve = diagnostics::kde(draws, options.kde_points, 0.0, 1.0);
      const std::string prefix = score.outcomes[i] + "," + std::to_string(h) + ",";
      if (curve.degenerate) {
        file.contents += prefix + num(draws.empty() ? 0.0 : draws.front()) + ",0,1\n";
        continue;
      }
      for (std::size_t g = 0; g < curve.grid.size(); ++g)
        file.contents += prefix + num(curve.grid[g]) + "," + num(curve.density[g]) + ",0\n";
    }
  }
  return {file};
}

std::vector<FigureFile> figure_files(const glm::GlmPosterior& post, FigureFamily family,
                                     const FigureOptions& options) {
  expect(family == FigureFamily::glm_marginals || family == FigureFamily::regression_lines ||
             family == FigureFamily::elasticity_vs_actual,
         family, "a behaviour model posterior");
  if (post.n_draws() == 0 || post.design.rows.empty()) throw DataError("posterior is empty");
  const std::string& id = post.design.consumer_id;

  if (family == FigureFamily::glm_marginals) {
    FigureFile f{figure_file_name(family, id), "param,x,density\n"};
    for (std::size_t p = 0; p < post.trace.dimension(); ++p) {
      const auto draws = post.trace.pooled_draws(p);
      const auto curve = diagnostics::kde(draws, options.kde_points);
      if (curve.degenerate) continue;
      for (std::size_t g = 0; g < curve.grid.size(); ++g)
        f.contents += join({post.trace.names[p], num(curve.grid[g]), num(curve.density[g])});
    }
    return {f};
  }

  if (family == FigureFamily::elasticity_vs_actual) {
    FigureFile f{figure_file_name(family, id), "response_index,modeled_mean,actual\n"};
    const auto means = post.row_means();
    for (std::size_t r = 0; r < post.design.rows.size(); ++r)
      f.contents += join({std::to_string(r), num(means[r]), num(post.design.rows[r].y)});
    return {f};
  }

  std::vector<double> grid = options.price_grid;
  if (grid.empty()) {
    const auto [lo, hi] = std::minmax_element(post.design.prices.begin(), post.design.prices.end());
    const std::size_t n = *lo == *hi ? 1 : 50;
    for (std::size_t i = 0; i < n; ++i)
      grid.push_back(n == 1 ? *lo : *lo + (*hi - *lo) * static_cast<double>(i) / (n - 1.0));
  }
  std::vector<FigureFile> files;
  auto emit = [&](std::optional<int> hour, std::string name) {
    const auto lines = glm::regression_lines(post, grid, hour, options.n_lines);
    FigureFile f{std::move(name), "hour,draw,price,mu\n"};
    const std::string h = std::to_string(hour.value_or(-1));
    for (std::size_t i = 0; i < lines.curves.size(); ++i)
      for (std::size_t g = 0; g < grid.size(); ++g)
        f.contents += join({h, std::to_string(lines.draw_index[i]), num(grid[g]),
                            num(lines.curves[i][g])});
    for (std::size_t g = 0; g < grid.size(); ++g)
      f.contents += join({h, "-1", num(grid[g]), num(lines.mean[g])});
    files.push_back(std::move(f));
  };
  for (int h = 0; h < causal::kHours; ++h) {
    char suffix[8];
    std::snprintf(suffix, sizeof suffix, "h%02d", h);
    emit(h, figure_file_name(family, id, suffix));
  }
  emit(std::nullopt, figure_file_name(family, id));
  return files;
}

std::vector<FigureFile> figure_files(const glm::Prediction& prediction,
                                     std::string_view consumer_id, FigureFamily family,
                                     const FigureOptions& options) {
  expect(family == FigureFamily::predictive_density, family, "a prediction");
  if (prediction.draws.empty()) throw DataError("prediction has no draws");
  std::vector<double> sorted = prediction.draws;
  std::sort(sorted.begin(), sorted.end());
  // Heavy-tailed draws: restrict the grid to the central 98%.
  const double lo = sorted[static_cast<std::size_t>(0.01 * static_cast<double>(sorted.size() - 1))];
  const double hi = sorted[static_cast<std::size_t>(0.99 * static_cast<double>(sorted.size() - 1))];
  const std::string price = num(prediction.price);
  FigureFile f{figure_file_name(family, consumer_id, price), "hour,x,density\n"};
  const auto curve = diagnostics::kde(prediction.draws, options.kde_points, lo, hi);
  if (curve.degenerate) {
    f.contents += join({std::to_string(prediction.hour), num(lo), "0"});
  } else {
    for (std::size_t g = 0; g < curve.grid.size(); ++g)
      f.contents +=
          join({std::to_string(prediction.hour), num(curve.grid[g]), num(curve.density[g])});
  }
  return {f};
}

std::vector<std::string> write_figures(const std::vector<FigureFile>& files,
                                       const std::string& out_dir) {
  if (files.empty()) throw DataError("no figure data to write");
  std::filesystem::create_directories(out_dir);
  std::vector<std::string> paths;
  for (const auto& f : files) {
    const std::string path = (std::filesystem::path(out_dir) / f.name).string();
    write_file_atomic(path, f.contents);
    paths.push_back(path);
  }
  return paths;
}

CsvTable parse_csv(std::string_view text) {
  CsvTable t;
  std::size_t pos = 0;
  bool first = true;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
      const std::size_t comma = line.find(',', start);
      fields.emplace_back(line.substr(start, comma == std::string_view::npos
                                                 ? std::string_view::npos
                                                 : comma - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (first) {
      t.header = std::move(fields);
      first = false;
    } else {
      if (fields.size() != t.header.size())
        throw DataError("CSV row has " + std::to_string(fields.size()) + " fields, header has " +
                        std::to_string(t.header.size()));
      t.rows.push_back(std::move(fields));
    }
  }
  if (first) throw DataError("CSV is empty");
  return t;
}

}  // namespace drm::report
