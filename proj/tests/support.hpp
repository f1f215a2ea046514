#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "salab/error.hpp"

namespace testing_support {

inline std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("salab_test_" + name)).string();
}

struct WarningCapture {
  std::vector<std::string> messages;
  WarningCapture() {
    salab::set_warning_sink([this](const std::string& m) { messages.push_back(m); });
  }
  ~WarningCapture() { salab::set_warning_sink(nullptr); }
};

}  // namespace testing_support
