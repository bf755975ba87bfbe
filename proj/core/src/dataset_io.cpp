#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "fixclr/data.hpp"
#include "fixclr/error.hpp"

namespace fixclr::data {

namespace {

constexpr const char* kMagic = "# fixclr-dataset v1";

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

template <typename T>
T parse_number(std::string_view text, const std::filesystem::path& path, std::size_t line) {
  T value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw DataError(path.string() + ":" + std::to_string(line) + ": cannot parse '" +
                    std::string(text) + "'");
  }
  return value;
}

}  // namespace

void write_dataset(const MultiDomainDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  const auto& prov = ds.provenance();
  nlohmann::json header = {{"num_domains", ds.num_domains()},
                           {"num_classes", ds.num_classes()},
                           {"feature_dim", ds.feature_dim()},
                           {"num_samples", ds.size()},
                           {"seed", prov.contains("config") && prov["config"].contains("seed")
                                        ? prov["config"]["seed"]
                                        : nlohmann::json(nullptr)},
                           {"provenance", prov}};
  out << kMagic << '\n' << "# " << header.dump() << '\n';
  out << "sample_id,domain_id,class_id";
  for (int f = 0; f < ds.feature_dim(); ++f) out << ",f" << f;
  out << '\n';
  for (const Sample& s : ds.samples()) {
    out << s.sample_id << ',' << s.domain_id << ',' << s.class_id;
    for (double v : s.features) out << ',' << format_real(v);
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

MultiDomainDataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMagic) {
    throw DataError(path.string() + ": not a fixclr dataset file");
  }
  if (!std::getline(in, line) || line.rfind("# ", 0) != 0) {
    throw DataError(path.string() + ": missing JSON header line");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line.substr(2));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": bad header: " + e.what());
  }
  int D = 0, C = 0, F = 0;
  std::size_t n = 0;
  try {
    D = header.at("num_domains").get<int>();
    C = header.at("num_classes").get<int>();
    F = header.at("feature_dim").get<int>();
    n = header.at("num_samples").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": bad header: " + e.what());
  }
  if (!std::getline(in, line)) throw DataError(path.string() + ": missing column header");

  std::vector<Sample> samples;
  samples.reserve(n);
  std::size_t line_no = 3;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    Sample s;
    s.features.reserve(static_cast<std::size_t>(F));
    std::string_view rest(line);
    int column = 0;
    while (true) {
      const auto comma = rest.find(',');
      const std::string_view field = rest.substr(0, comma);
      switch (column) {
        case 0: s.sample_id = parse_number<SampleId>(field, path, line_no); break;
        case 1: s.domain_id = parse_number<int>(field, path, line_no); break;
        case 2: s.class_id = parse_number<int>(field, path, line_no); break;
        default: s.features.push_back(parse_number<double>(field, path, line_no)); break;
      }
      ++column;
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (column != 3 + F) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(3 + F) + " fields, got " + std::to_string(column));
    }
    samples.push_back(std::move(s));
  }
  if (samples.size() != n) {
    throw DataError(path.string() + ": header says " + std::to_string(n) + " samples, found " +
                    std::to_string(samples.size()));
  }
  return MultiDomainDataset(D, C, F, std::move(samples), header.value("provenance", nlohmann::json::object()));
}

}  // namespace fixclr::data
