#pragma once

#include <filesystem>
#include <iosfwd>

#include "aspectmf/model.hpp"
#include "aspectmf/temporal.hpp"

namespace aspectmf {

// Everything needed to predict: parameters, time reference and switches.
struct ModelBundle {
  ModelParams params;
  TemporalContext ctx;
  AspectConfig cfg;

  friend bool operator==(const ModelBundle& a, const ModelBundle& b) {
    return a.params == b.params && a.cfg == b.cfg && a.ctx.beta == b.ctx.beta &&
           a.ctx.num_bins == b.ctx.num_bins && a.ctx.t_min == b.ctx.t_min &&
           a.ctx.t_max == b.ctx.t_max && a.ctx.day_length == b.ctx.day_length &&
           a.ctx.user_mean_day == b.ctx.user_mean_day;
  }
};

// Text format, header `aspectmf v1 N M D num_bins beta mu`, then one section
// per group. Values are written with 17 significant digits.
void save_model(std::ostream& out, const ModelBundle& m);
void save_model(const std::filesystem::path& path, const ModelBundle& m);
// Throws DataError on a malformed or truncated file.
ModelBundle load_model(std::istream& in, const std::string& source = "<stream>");
ModelBundle load_model(const std::filesystem::path& path);

}  // namespace aspectmf
