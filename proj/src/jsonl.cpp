#include "privq/jsonl.hpp"

#include <sstream>

namespace privq {

namespace fs = std::filesystem;

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw Error(ErrorCode::kIo, "short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::vector<Json> read_jsonl(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<Json> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      rows.push_back(Json::parse(line));
    } catch (const Json::parse_error& e) {
      throw Error(ErrorCode::kInvalidArgument,
                  path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

JsonlWriter::JsonlWriter(fs::path path) : path_(std::move(path)) {
  if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
  partial_ = path_;
  partial_ += ".partial";
  out_.open(partial_, std::ios::binary | std::ios::trunc);
  if (!out_) throw Error(ErrorCode::kIo, "cannot write " + partial_.string());
}

JsonlWriter::~JsonlWriter() {
  if (!finalized_) {
    out_.close();
    std::error_code ec;
    fs::remove(partial_, ec);
  }
}

void JsonlWriter::write(const Json& row) {
  std::lock_guard lock(mu_);
  if (finalized_) throw Error(ErrorCode::kIo, path_.string() + " already finalized");
  out_ << row.dump(-1, ' ', false, Json::error_handler_t::replace) << '\n';
  ++lines_;
}

void JsonlWriter::finalize() {
  std::lock_guard lock(mu_);
  if (finalized_) return;
  out_.flush();
  if (!out_) throw Error(ErrorCode::kIo, "short write to " + partial_.string());
  out_.close();
  fs::rename(partial_, path_);
  finalized_ = true;
}

}  // namespace privq
