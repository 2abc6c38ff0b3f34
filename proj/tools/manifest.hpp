#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace aspectmf::cli {

// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

class Manifest {
 public:
  Manifest(std::string command, std::vector<std::string> argv);

  void set_config(const std::vector<std::pair<std::string, std::string>>& entries);
  void set_option(const std::string& key, nlohmann::json value);
  void add_input(const std::string& role, const std::filesystem::path& path);
  void add_seed(std::uint64_t seed);
  void add_output(const std::filesystem::path& path);
  void add_warning(const std::string& msg);

  // Writes manifest.json into `dir` with outputs hashed.
  void write(const std::filesystem::path& dir, int exit_code);

 private:
  nlohmann::json doc_;
  std::vector<std::filesystem::path> outputs_;
  std::chrono::system_clock::time_point start_;
};

}  // namespace aspectmf::cli
