#include "privq/log.hpp"

#include <iostream>
#include <mutex>

namespace privq {

namespace {

std::mutex g_mu;

LogSink& sink() {
  static LogSink s = [](const std::string& m) { std::cerr << "warning: " << m << '\n'; };
  return s;
}

}  // namespace

LogSink set_warning_sink(LogSink s) {
  std::lock_guard lock(g_mu);
  std::swap(sink(), s);
  return s;
}

void log_warning(const std::string& message) {
  std::lock_guard lock(g_mu);
  if (sink()) sink()(message);
}

}  // namespace privq
