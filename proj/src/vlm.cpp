#include "hijack/vlm.hpp"

#include <map>
#include <mutex>
#include <sstream>

namespace hijack {

namespace {
std::map<std::string, AdapterFactory>& registry() {
  static std::map<std::string, AdapterFactory> r;
  return r;
}
std::mutex& registry_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

void register_adapter(const std::string& name, AdapterFactory factory) {
  std::lock_guard<std::mutex> lock(registry_mutex());
  auto [it, inserted] = registry().emplace(name, std::move(factory));
  if (!inserted) throw ConfigError("adapter already registered: " + name);
}

AdapterFactory resolve_adapter(const std::string& name) {
  std::lock_guard<std::mutex> lock(registry_mutex());
  auto it = registry().find(name);
  if (it == registry().end()) {
    std::ostringstream msg;
    msg << "unknown adapter '" << name << "'; available:";
    for (const auto& [k, v] : registry()) msg << " " << k;
    throw ConfigError(msg.str());
  }
  return it->second;
}

std::vector<std::string> registered_adapters() {
  std::lock_guard<std::mutex> lock(registry_mutex());
  std::vector<std::string> names;
  for (const auto& [k, v] : registry()) names.push_back(k);
  return names;
}

VlmPtr make_vlm(const std::string& adapter, const nlohmann::json& params) {
  return resolve_adapter(adapter)(params);
}

}  // namespace hijack
