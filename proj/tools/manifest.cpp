#include "manifest.hpp"

#include <array>
#include <ctime>
#include <fstream>
#include <memory>

#include <openssl/evp.h>

#include "aspectmf/error.hpp"

namespace aspectmf::cli {

namespace {

std::string iso_utc(std::chrono::system_clock::time_point t) {
  const std::time_t tt = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1)
    throw DataError("sha256 init failed");
  std::array<char, 1 << 16> buf;
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

Manifest::Manifest(std::string command, std::vector<std::string> argv)
    : start_(std::chrono::system_clock::now()) {
  doc_["command"] = std::move(command);
  doc_["argv"] = std::move(argv);
  doc_["config"] = nlohmann::json::object();
  doc_["options"] = nlohmann::json::object();
  doc_["inputs"] = nlohmann::json::array();
  doc_["seeds"] = nlohmann::json::array();
  doc_["warnings"] = nlohmann::json::array();
}

void Manifest::set_config(const std::vector<std::pair<std::string, std::string>>& entries) {
  auto& c = doc_["config"];
  for (const auto& [k, v] : entries) c[k] = v;
}

void Manifest::set_option(const std::string& key, nlohmann::json value) {
  doc_["options"][key] = std::move(value);
}

void Manifest::add_input(const std::string& role, const std::filesystem::path& path) {
  doc_["inputs"].push_back({{"role", role}, {"path", path.string()}, {"sha256", sha256_file(path)}});
}

void Manifest::add_seed(std::uint64_t seed) { doc_["seeds"].push_back(seed); }

void Manifest::add_output(const std::filesystem::path& path) { outputs_.push_back(path); }

void Manifest::add_warning(const std::string& msg) { doc_["warnings"].push_back(msg); }

void Manifest::write(const std::filesystem::path& dir, int exit_code) {
  auto outs = nlohmann::json::array();
  for (const auto& p : outputs_) {
    nlohmann::json o = {{"path", p.string()}};
    if (std::filesystem::exists(p)) o["sha256"] = sha256_file(p);
    outs.push_back(std::move(o));
  }
  doc_["outputs"] = std::move(outs);
  doc_["started"] = iso_utc(start_);
  const auto end = std::chrono::system_clock::now();
  doc_["finished"] = iso_utc(end);
  doc_["wall_seconds"] = std::chrono::duration<double>(end - start_).count();
  doc_["exit_code"] = exit_code;
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "manifest.json");
  if (!out) throw DataError("cannot write " + (dir / "manifest.json").string());
  out << doc_.dump(2) << '\n';
}

}  // namespace aspectmf::cli
