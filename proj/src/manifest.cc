#include "nestcv/manifest.h"

#include <charconv>
#include <fstream>
#include <sstream>

#include "nestcv/error.h"
#include "text_util.h"

namespace nestcv {

Manifest::Manifest(std::vector<DataItem> items) : items_(std::move(items)) {
  if (items_.empty()) throw IntegrityError("manifest has no items");
  std::unordered_map<std::string, const std::string*> supergroup_of;
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const auto& item = items_[i];
    if (item.item_id.empty()) throw IntegrityError("item with empty item_id");
    if (!index_.emplace(item.item_id, i).second)
      throw IntegrityError("duplicate item_id '" + item.item_id + "'");
    auto [it, inserted] = supergroup_of.emplace(item.group_id, &item.supergroup_id);
    if (!inserted && *it->second != item.supergroup_id)
      throw IntegrityError("group '" + item.group_id + "' spans supergroups '" +
                           *it->second + "' and '" + item.supergroup_id + "'");
    if (class_index(item.label) < 0) class_names_.push_back(item.label);
  }
}

int Manifest::class_index(const std::string& label) const {
  for (std::size_t c = 0; c < class_names_.size(); ++c)
    if (class_names_[c] == label) return static_cast<int>(c);
  return -1;
}

std::optional<std::size_t> Manifest::find(const std::string& item_id) const {
  auto it = index_.find(item_id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

bool Manifest::has_features() const {
  for (const auto& item : items_)
    if (!item.features) return false;
  return true;
}

std::size_t Manifest::feature_dim() const {
  if (!has_features()) throw IntegrityError("manifest items lack feature vectors");
  const auto dim = items_.front().features->size();
  for (const auto& item : items_)
    if (item.features->size() != dim)
      throw IntegrityError("feature dimension mismatch at item '" + item.item_id +
                           "'");
  if (dim == 0) throw IntegrityError("feature vectors are empty");
  return dim;
}

namespace {

std::vector<double> parse_features(std::string_view field, std::size_t line) {
  std::vector<double> out;
  if (field.empty()) return out;
  for (const auto& part : detail::split(field, ';')) {
    double v = 0;
    const auto* end = part.data() + part.size();
    auto [ptr, ec] = std::from_chars(part.data(), end, v);
    if (ec != std::errc() || ptr != end)
      throw ParseError("bad feature value '" + std::string(part) + "'", line);
    out.push_back(v);
  }
  return out;
}

}  // namespace

Manifest parse_manifest(const std::string& text) {
  std::istringstream in(text);
  std::string raw;
  std::size_t line = 0;

  int col_features = -1, col_payload = -1;
  std::size_t ncols = 0;
  bool have_header = false;
  std::vector<DataItem> items;

  while (std::getline(in, raw)) {
    ++line;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    if (raw.empty()) continue;
    const auto fields = detail::split(raw, ',');
    if (!have_header) {
      static const char* required[] = {"item_id", "group_id", "supergroup_id",
                                       "label"};
      if (fields.size() < 4)
        throw ParseError("manifest header needs item_id,group_id,supergroup_id,label",
                         line);
      for (int c = 0; c < 4; ++c)
        if (fields[c] != required[c])
          throw ParseError("manifest header column " + std::to_string(c + 1) +
                               " must be '" + required[c] + "'",
                           line);
      for (std::size_t c = 4; c < fields.size(); ++c) {
        if (fields[c] == "features" && col_features < 0 && col_payload < 0)
          col_features = static_cast<int>(c);
        else if (fields[c] == "payload_ref" && col_payload < 0)
          col_payload = static_cast<int>(c);
        else
          throw ParseError("unexpected manifest column '" + std::string(fields[c]) +
                               "'",
                           line);
      }
      ncols = fields.size();
      have_header = true;
      continue;
    }
    if (fields.size() != ncols)
      throw ParseError("expected " + std::to_string(ncols) + " fields, got " +
                           std::to_string(fields.size()),
                       line);
    DataItem item;
    item.item_id = std::string(fields[0]);
    if (item.item_id.empty()) throw ParseError("empty item_id", line);
    item.group_id = fields[1].empty() ? item.item_id : std::string(fields[1]);
    item.supergroup_id = fields[2].empty() ? item.group_id : std::string(fields[2]);
    item.label = std::string(fields[3]);
    if (item.label.empty()) throw ParseError("empty label", line);
    if (col_features >= 0) item.features = parse_features(fields[col_features], line);
    if (col_payload >= 0) item.payload_ref = std::string(fields[col_payload]);
    items.push_back(std::move(item));
  }
  if (!have_header) throw IntegrityError("manifest is empty");
  return Manifest(std::move(items));
}

Manifest load_manifest(const std::filesystem::path& path) {
  return parse_manifest(detail::read_file(path));
}

std::string format_manifest(const Manifest& manifest) {
  bool features = false, payload = false;
  for (const auto& item : manifest.items()) {
    features = features || item.features.has_value();
    payload = payload || item.payload_ref.has_value();
  }
  std::string out = "item_id,group_id,supergroup_id,label";
  if (features) out += ",features";
  if (payload) out += ",payload_ref";
  out += '\n';
  for (const auto& item : manifest.items()) {
    out += item.item_id + ',' + item.group_id + ',' + item.supergroup_id + ',' +
           item.label;
    if (features) {
      out += ',';
      if (item.features) {
        for (std::size_t f = 0; f < item.features->size(); ++f) {
          if (f) out += ';';
          out += detail::format_double((*item.features)[f]);
        }
      }
    }
    if (payload) out += ',' + item.payload_ref.value_or("");
    out += '\n';
  }
  return out;
}

void write_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  detail::write_file_atomic(path, format_manifest(manifest));
}

std::size_t ManifestSummary::count_class(const std::string& label) const {
  auto it = per_class.find(label);
  return it == per_class.end() ? 0 : it->second;
}

std::optional<std::string> ManifestSummary::imbalance_note() const {
  if (per_class.size() < 2) return std::nullopt;
  std::size_t lo = per_class.begin()->second, hi = lo;
  for (const auto& [label, n] : per_class) {
    lo = std::min(lo, n);
    hi = std::max(hi, n);
  }
  if (lo == hi) return std::nullopt;
  std::ostringstream note;
  note << "note: class counts are imbalanced (";
  bool first = true;
  for (const auto& [label, n] : per_class) {
    note << (first ? "" : ", ") << label << "=" << n;
    first = false;
  }
  note << ")";
  return note.str();
}

ManifestSummary summarize(const Manifest& manifest,
                          const std::optional<std::set<std::string>>& class_filter) {
  ManifestSummary s;
  for (const auto& item : manifest.items()) {
    if (class_filter && !class_filter->count(item.label)) continue;
    ++s.total;
    ++s.per_class[item.label];
    ++s.per_group[item.group_id];
    ++s.per_supergroup[item.supergroup_id];
    ++s.per_supergroup_class[{item.supergroup_id, item.label}];
  }
  return s;
}

}  // namespace nestcv
