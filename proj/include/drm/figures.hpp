#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "drm/glm.hpp"
#include "drm/scorer.hpp"

namespace drm::report {

enum class FigureFamily {
  score_density,         // ResponseScore: KDE per (outcome, hour)
  score_by_hour,         // ResponseScore: mean and HPD bounds per (outcome, hour)
  glm_marginals,         // GlmPosterior: KDE per parameter
  regression_lines,      // GlmPosterior: mu against price, per hour and aggregated
  elasticity_vs_actual,  // GlmPosterior: 72 modeled means against observed y
  predictive_density,    // Prediction: KDE of predictive draws
};

std::string to_string(FigureFamily family);
FigureFamily family_from_string(std::string_view text);

struct FigureOptions {
  std::vector<double> price_grid;  // regression_lines; default 50 points over the design prices
  std::size_t n_lines = 100;       // thinned regression lines per file
  std::size_t kde_points = 256;
};

/// A file about to be written: name relative to the output directory.
struct FigureFile {
  std::string name;
  std::string contents;
};

/// Builds the files of one family without touching the filesystem. Throws
/// std::invalid_argument when the family does not belong to the input type
/// and DataError when the input is empty.
std::vector<FigureFile> figure_files(const scorer::ResponseScore& score, FigureFamily family,
                                     const FigureOptions& options = {});
std::vector<FigureFile> figure_files(const glm::GlmPosterior& post, FigureFamily family,
                                     const FigureOptions& options = {});
std::vector<FigureFile> figure_files(const glm::Prediction& prediction,
                                     std::string_view consumer_id, FigureFamily family,
                                     const FigureOptions& options = {});

/// Writes every file atomically into out_dir (created if missing) and
/// returns the paths. Nothing is written unless every file was built.
std::vector<std::string> write_figures(const std::vector<FigureFile>& files,
                                       const std::string& out_dir);

template <typename Result>
std::vector<std::string> emit_figure_data(const Result& result, FigureFamily family,
                                          const std::string& out_dir,
                                          const FigureOptions& options = {}) {
  return write_figures(figure_files(result, family, options), out_dir);
}

/// `{family}_{subject}[_{price}].csv` with characters outside [A-Za-z0-9.-]
/// replaced by '-'.
std::string figure_file_name(FigureFamily family, std::string_view subject,
                             std::optional<std::string_view> price = std::nullopt);

/// Minimal reader for the emitted CSVs: header plus rows of fields.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};
CsvTable parse_csv(std::string_view text);

}  // namespace drm::report
