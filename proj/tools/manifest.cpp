#include "manifest.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <json.hpp>

#include "wdgda/binary_io.hpp"
#include "wdgda/errors.hpp"

namespace wdgda::cli {

namespace {

std::string sha1_of(const std::vector<std::uint8_t>& prefix, const std::uint8_t* data, std::size_t n) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw InvariantError("sha1: cannot allocate digest context");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, prefix.data(), prefix.size()) == 1 &&
                  EVP_DigestUpdate(ctx, data, n) == 1 && EVP_DigestFinal_ex(ctx, md, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw InvariantError("sha1: digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 15]);
  }
  return out;
}

}  // namespace

std::string git_blob_hash(const std::vector<std::uint8_t>& bytes) {
  const auto head = "blob " + std::to_string(bytes.size());
  std::vector<std::uint8_t> prefix(head.begin(), head.end());
  prefix.push_back(0);
  return sha1_of(prefix, bytes.data(), bytes.size());
}

std::string sha1_hex(const std::string& text) {
  return sha1_of({}, reinterpret_cast<const std::uint8_t*>(text.data()), text.size());
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void RunManifest::add_input_file(const std::string& path) {
  inputs.emplace_back(path, git_blob_hash(read_file_bytes(path)));
}

void RunManifest::add_input_dir(const std::string& dir) {
  std::vector<std::string> files;
  std::error_code ec;
  for (const auto& e : std::filesystem::directory_iterator(dir, ec))
    if (e.is_regular_file()) files.push_back(e.path().string());
  if (ec) throw IoError("cannot list " + dir + ": " + ec.message());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) add_input_file(f);
}

void RunManifest::add_input_text(const std::string& name, const std::string& text) {
  inputs.emplace_back(name, git_blob_hash(std::vector<std::uint8_t>(text.begin(), text.end())));
}

std::string RunManifest::input_hash() const {
  auto sorted = inputs;
  std::sort(sorted.begin(), sorted.end());
  std::string lines;
  for (const auto& [name, hash] : sorted) lines += name + " " + hash + "\n";
  return sha1_hex(lines);
}

std::string RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["argv"] = argv;
  j["config"] = config_text;
  j["seeds"] = seeds;
  auto in = nlohmann::ordered_json::array();
  for (const auto& [name, hash] : inputs) in.push_back({{"path", name}, {"blob", hash}});
  j["inputs"] = in;
  j["input_hash"] = input_hash();
  j["output_dir"] = output_dir;
  j["outputs"] = outputs;
  j["started"] = started;
  j["finished"] = finished;
  return j.dump(2) + "\n";
}

void RunManifest::write(const std::string& path) {
  finished = utc_timestamp();
  const auto text = to_json();
  write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

}  // namespace wdgda::cli
