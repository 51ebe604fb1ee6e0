#pragma once

#include <filesystem>
#include <memory>

#include "smis/analytic_generator.hpp"
#include "smis/style_generator.hpp"

namespace smis {

inline std::unique_ptr<Generator> generator_from_archive(const Archive& a) {
  if (a.meta.value("kind", "") != "generator") throw InputError("archive is not a generator checkpoint");
  const auto backend = a.meta.at("metadata").at("backend").get<std::string>();
  if (backend == "analytic") return std::make_unique<AnalyticGenerator>(AnalyticGenerator::from_archive(a));
  if (backend == "style") return std::make_unique<StyleGenerator>(StyleGenerator::from_archive(a));
  throw InputError("unknown generator backend '" + backend + "'");
}

inline std::unique_ptr<Generator> load_generator(const std::filesystem::path& path) {
  return generator_from_archive(load_archive(path));
}

inline void save_generator(const Generator& g, const std::filesystem::path& path) {
  save_archive(g.to_archive(), path);
}

}  // namespace smis
