#pragma once

#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <vector>

#include "privq/core.hpp"
#include "privq/error.hpp"

namespace privq {

std::string read_text_file(const std::filesystem::path& path);

/// Writes via a sibling temp file then renames over the target.
void write_text_atomic(const std::filesystem::path& path, const std::string& content);

/// One JSON document per nonblank line. Parse errors name the line number.
std::vector<Json> read_jsonl(const std::filesystem::path& path);

template <class T>
std::vector<T> read_jsonl_as(const std::filesystem::path& path) {
  std::vector<T> out;
  std::size_t line = 0;
  for (const auto& j : read_jsonl(path)) {
    ++line;
    try {
      out.push_back(j.get<T>());
    } catch (const Json::exception& e) {
      throw Error(ErrorCode::kInvalidArgument,
                  path.string() + ": record " + std::to_string(line) + ": " + e.what());
    }
  }
  return out;
}

/// Serialized JSON-lines writer. Lines go to `<path>.partial`; finalize()
/// flushes and renames onto `path`, so a finalized file is never half-written.
class JsonlWriter {
 public:
  explicit JsonlWriter(std::filesystem::path path);
  ~JsonlWriter();
  JsonlWriter(const JsonlWriter&) = delete;
  JsonlWriter& operator=(const JsonlWriter&) = delete;

  void write(const Json& row);
  void finalize();
  std::size_t lines() const { return lines_; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::filesystem::path partial_;
  std::ofstream out_;
  std::mutex mu_;
  std::size_t lines_ = 0;
  bool finalized_ = false;
};

template <class Range>
void write_jsonl(const std::filesystem::path& path, const Range& rows) {
  JsonlWriter w(path);
  for (const auto& r : rows) w.write(Json(r));
  w.finalize();
}

}  // namespace privq
