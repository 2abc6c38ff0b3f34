#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "aspectmf/model.hpp"

namespace aspectmf {

// Applies one `key = value` setting. Keys: lambda_<group> and gamma_<group>
// for every parameter group, lambda_all, gamma_all, lambda_T, gamma_T,
// lambda_t, eta_P, eta_W, eta_Z, beta, num_bins, D, max_iter, lr_decay,
// init_mean, init_std, seed, split_seed. Throws UsageError on an unknown key
// or unparsable value.
void apply_setting(HyperParams& h, std::string_view key, std::string_view value);

// Reads a flat config file over `base`. `#` starts a comment.
HyperParams parse_hyperparams(std::istream& in, HyperParams base = {},
                              const std::string& source = "<stream>");
HyperParams load_hyperparams(const std::filesystem::path& path, HyperParams base = {});

// Every key with its resolved value, in a stable order.
std::vector<std::pair<std::string, std::string>> hyperparam_entries(const HyperParams& h);
void write_hyperparams(std::ostream& out, const HyperParams& h);

// The tuned defaults shipped as configs/default.cfg, compiled in.
HyperParams shipped_hyperparams();

}  // namespace aspectmf
