#pragma once

#include <functional>
#include <string>

namespace privq {

using LogSink = std::function<void(const std::string&)>;

/// Replaces the warning sink (stderr by default); returns the previous one.
LogSink set_warning_sink(LogSink sink);
void log_warning(const std::string& message);

}  // namespace privq
