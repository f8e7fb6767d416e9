#include "jointcar/error.hpp"

#include <iostream>

namespace jcar {

void emit_warning(Warnings* sink, const std::string& message) {
  if (sink != nullptr) {
    sink->push_back(message);
  } else {
    std::cerr << "warning: " << message << '\n';
  }
}

bool is_valid_label(const std::string& label) {
  if (label.empty()) return false;
  for (char c : label) {
    const bool ok = (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') ||
                    (c >= '0' && c <= '9') || c == '_' || c == '-';
    if (!ok) return false;
  }
  return true;
}

}  // namespace jcar
