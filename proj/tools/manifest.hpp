#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace wdgda::cli {

// SHA-1 of "blob <size>\0" followed by the bytes, as git computes it.
std::string git_blob_hash(const std::vector<std::uint8_t>& bytes);
std::string sha1_hex(const std::string& text);

std::string utc_timestamp();

struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  std::string config_text;
  std::map<std::string, std::uint64_t> seeds;
  std::vector<std::pair<std::string, std::string>> inputs;  // name, blob hash
  std::string output_dir;
  std::vector<std::string> outputs;
  std::string started;
  std::string finished;

  void add_input_file(const std::string& path);
  // every regular file directly inside `dir`, sorted by name
  void add_input_dir(const std::string& dir);
  void add_input_text(const std::string& name, const std::string& text);

  // hash over the sorted "name hash" lines of all inputs
  std::string input_hash() const;
  std::string to_json() const;
  void write(const std::string& path);
};

}  // namespace wdgda::cli
