#include "nlens/nda.hpp"

#include "nlens/error.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace nlens {

namespace fs = std::filesystem;
using json = nlohmann::json;

void write_f32_le(std::ostream& out, const float* data, std::size_t count) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(float)));
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      std::uint32_t bits = std::bit_cast<std::uint32_t>(data[i]);
      bits = __builtin_bswap32(bits);
      out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  }
}

void read_f32_le(std::istream& in, float* data, std::size_t count) {
  in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * sizeof(float)));
  if constexpr (std::endian::native != std::endian::little) {
    for (std::size_t i = 0; i < count; ++i)
      data[i] = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(data[i])));
  }
}

void save_dataset(const ActivationDataset& ds, const fs::path& dir) {
  if (!ds.has_full_layout())
    throw InvalidArgument("only datasets with the full L*H neuron layout can be saved as NDA");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw DataError("cannot create directory " + dir.string());

  json manifest = {
      {"magic", kNdaMagic},
      {"model", ds.meta().model},
      {"task", ds.meta().task},
      {"kind", to_string(ds.kind())},
      {"num_items", ds.num_items()},
      {"num_layers", ds.num_layers()},
      {"hidden_size", ds.hidden_size()},
      {"labels", ds.labels()},
      {"seed", ds.meta().seed ? json(*ds.meta().seed) : json(nullptr)},
  };
  {
    std::ofstream out(dir / "manifest.json");
    if (!out) throw DataError("cannot write " + (dir / "manifest.json").string());
    out << manifest.dump(2) << '\n';
  }
  {
    std::ofstream out(dir / "items.jsonl");
    if (!out) throw DataError("cannot write " + (dir / "items.jsonl").string());
    for (const auto& it : ds.items()) out << json{{"text", it.text}, {"label", it.label}}.dump() << '\n';
  }
  const auto rows = static_cast<std::size_t>(ds.num_items());
  const auto h = static_cast<std::size_t>(ds.hidden_size());
  std::vector<float> buffer(rows * h);
  for (int layer = 0; layer < ds.num_layers(); ++layer) {
    const auto first = static_cast<Eigen::Index>(layer) * ds.hidden_size();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t o = 0; o < h; ++o)
        buffer[i * h + o] = ds.activations()(static_cast<Eigen::Index>(i), first + static_cast<Eigen::Index>(o));
    const fs::path file = dir / ("layer_" + std::to_string(layer) + ".f32");
    std::ofstream out(file, std::ios::binary);
    if (!out) throw DataError("cannot write " + file.string());
    write_f32_le(out, buffer.data(), buffer.size());
    if (!out) throw DataError("short write to " + file.string());
  }
}

ActivationDataset load_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  std::ifstream manifest_in(manifest_path);
  if (!manifest_in) throw DataError("missing manifest: " + manifest_path.string());
  json manifest;
  try {
    manifest = json::parse(manifest_in);
  } catch (const json::exception& e) {
    throw DataError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  if (!manifest.contains("magic") || manifest["magic"] != kNdaMagic)
    throw DataError("wrong magic/version in " + manifest_path.string() + " (expected NDA1)");

  std::size_t num_items = 0;
  int num_layers = 0;
  int hidden = 0;
  std::vector<std::string> labels;
  ItemKind kind{};
  DatasetMeta meta;
  try {
    num_items = manifest.at("num_items").get<std::size_t>();
    num_layers = manifest.at("num_layers").get<int>();
    hidden = manifest.at("hidden_size").get<int>();
    labels = manifest.at("labels").get<std::vector<std::string>>();
    kind = item_kind_from_string(manifest.at("kind").get<std::string>());
    meta.model = manifest.value("model", "");
    meta.task = manifest.value("task", "");
    if (manifest.contains("seed") && !manifest["seed"].is_null()) meta.seed = manifest["seed"].get<std::int64_t>();
  } catch (const json::exception& e) {
    throw DataError("invalid manifest field in " + manifest_path.string() + ": " + e.what());
  }
  if (num_layers < 1 || hidden < 1) throw DataError("manifest declares non-positive num_layers or hidden_size");

  std::vector<Item> items;
  items.reserve(num_items);
  {
    const fs::path items_path = dir / "items.jsonl";
    std::ifstream in(items_path);
    if (!in) throw DataError("missing items file: " + items_path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      try {
        auto rec = json::parse(line);
        items.push_back({rec.at("text").get<std::string>(), rec.at("label").get<int>()});
      } catch (const json::exception& e) {
        throw DataError(items_path.string() + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
  }
  if (items.size() != num_items)
    throw DataError("items.jsonl has " + std::to_string(items.size()) + " records, manifest declares " +
                    std::to_string(num_items));

  const auto h = static_cast<std::size_t>(hidden);
  ActivationMatrix acts(static_cast<Eigen::Index>(num_items), static_cast<Eigen::Index>(num_layers) * hidden);
  std::vector<float> buffer(num_items * h);
  for (int layer = 0; layer < num_layers; ++layer) {
    const fs::path file = dir / ("layer_" + std::to_string(layer) + ".f32");
    const std::uintmax_t expected = 4ULL * num_items * h;
    std::error_code ec;
    const std::uintmax_t actual = fs::file_size(file, ec);
    if (ec) throw DataError("missing layer file " + file.string());
    if (actual != expected)
      throw DataError("layer file " + file.string() + " has " + std::to_string(actual) + " bytes, expected " +
                      std::to_string(expected));
    std::ifstream in(file, std::ios::binary);
    read_f32_le(in, buffer.data(), buffer.size());
    if (!in) throw DataError("failed reading " + file.string());
    const auto first = static_cast<Eigen::Index>(layer) * hidden;
    for (std::size_t i = 0; i < num_items; ++i)
      for (std::size_t o = 0; o < h; ++o)
        acts(static_cast<Eigen::Index>(i), first + static_cast<Eigen::Index>(o)) = buffer[i * h + o];
  }
  return ActivationDataset(std::move(items), std::move(labels), kind, num_layers, hidden, std::move(acts),
                           std::move(meta));
}

}  // namespace nlens
