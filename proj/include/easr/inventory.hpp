#pragma once

#include <algorithm>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace easr {

struct CorpusError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace utf8 {

// Splits a UTF-8 string into codepoint-sized graphemes. Throws on malformed
// sequences.
inline std::vector<std::string> graphemes(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const unsigned char c = static_cast<unsigned char>(text[i]);
    std::size_t len = 0;
    if (c < 0x80) {
      len = 1;
    } else if ((c & 0xe0) == 0xc0) {
      len = 2;
    } else if ((c & 0xf0) == 0xe0) {
      len = 3;
    } else if ((c & 0xf8) == 0xf0) {
      len = 4;
    } else {
      throw CorpusError("malformed UTF-8 byte at offset " + std::to_string(i));
    }
    if (i + len > text.size()) {
      throw CorpusError("truncated UTF-8 sequence at offset " +
                        std::to_string(i));
    }
    for (std::size_t k = 1; k < len; ++k) {
      if ((static_cast<unsigned char>(text[i + k]) & 0xc0) != 0x80) {
        throw CorpusError("malformed UTF-8 continuation at offset " +
                          std::to_string(i + k));
      }
    }
    out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

}  // namespace utf8

// Ordered grapheme set with reserved bookkeeping symbols. Layout:
//   0          <space>
//   1..        body graphemes, sorted by codepoint
//   ..         <unk>, <sos>, <eos>
//   size()     <blank>   (CTC only; one past the end, not a member)
// Transcript bodies contain only <space> and body graphemes (plus <unk> for
// characters outside the inventory at decode time); <sos>/<eos> frame decoder
// sequences and never appear inside a body.
class GraphemeInventory {
 public:
  static constexpr const char* kSpace = "<space>";
  static constexpr const char* kUnk = "<unk>";
  static constexpr const char* kSos = "<sos>";
  static constexpr const char* kEos = "<eos>";
  static constexpr const char* kBlank = "<blank>";
  // Rendering of <unk> in decoded text: U+FFFD, which maps back to <unk>.
  static constexpr const char* kUnkGlyph = "\xef\xbf\xbd";

  GraphemeInventory() = default;

  static GraphemeInventory from_body(const std::set<std::string>& body) {
    GraphemeInventory inv;
    inv.symbols_.push_back(kSpace);
    for (const auto& g : body) {
      if (g == " " || g.empty()) continue;
      inv.symbols_.push_back(g);
    }
    inv.space_ = 0;
    inv.unk_ = static_cast<int>(inv.symbols_.size());
    inv.symbols_.push_back(kUnk);
    inv.sos_ = static_cast<int>(inv.symbols_.size());
    inv.symbols_.push_back(kSos);
    inv.eos_ = static_cast<int>(inv.symbols_.size());
    inv.symbols_.push_back(kEos);
    inv.index_all();
    return inv;
  }

  static GraphemeInventory from_texts(std::span<const std::string> texts) {
    std::set<std::string> body;
    for (const auto& t : texts) {
      for (auto& g : utf8::graphemes(t)) {
        if (g != " ") body.insert(std::move(g));
      }
    }
    return from_body(body);
  }

  int size() const { return static_cast<int>(symbols_.size()); }
  int space() const { return space_; }
  int unk() const { return unk_; }
  int sos() const { return sos_; }
  int eos() const { return eos_; }
  int blank() const { return size(); }  // CTC head emits size()+1 classes

  const std::string& symbol(int id) const {
    if (id < 0 || id > size()) {
      throw CorpusError("symbol id out of range: " + std::to_string(id));
    }
    if (id == size()) {
      static const std::string blank_name = kBlank;
      return blank_name;
    }
    return symbols_[static_cast<std::size_t>(id)];
  }

  bool is_reserved(int id) const {
    return id == unk_ || id == sos_ || id == eos_ || id == blank();
  }

  int find(std::string_view g) const {
    auto it = index_.find(std::string(g));
    return it == index_.end() ? -1 : it->second;
  }

  // Body text -> ids. The space character maps to <space>; anything outside
  // the inventory maps to <unk>. <sos>/<eos>/<blank> never appear.
  std::vector<int> encode(std::string_view text,
                          std::size_t* unk_count = nullptr) const {
    std::vector<int> out;
    for (const auto& g : utf8::graphemes(text)) {
      if (g == " ") {
        out.push_back(space_);
        continue;
      }
      const int id = find(g);
      if (id < 0 || id == sos_ || id == eos_) {
        if (unk_count != nullptr) ++*unk_count;
        out.push_back(unk_);
      } else {
        out.push_back(id);
      }
    }
    return out;
  }

  std::string decode(std::span<const int> ids) const {
    std::string out;
    for (int id : ids) {
      if (id == space_) {
        out += ' ';
      } else if (id == unk_) {
        out += kUnkGlyph;
      } else if (id == sos_ || id == eos_ || id == blank()) {
        continue;  // framing symbols carry no text
      } else {
        out += symbol(id);
      }
    }
    return out;
  }

  bool operator==(const GraphemeInventory& o) const {
    return symbols_ == o.symbols_;
  }

  // Single-line serialization: symbols joined by commas, with backslash
  // escapes for comma, backslash and newline.
  std::string serialize() const {
    std::string out;
    for (std::size_t i = 0; i < symbols_.size(); ++i) {
      if (i) out += ',';
      for (char c : symbols_[i]) {
        if (c == ',' || c == '\\') out += '\\';
        if (c == '\n') {
          out += "\\n";
        } else {
          out += c;
        }
      }
    }
    return out;
  }

  static GraphemeInventory deserialize(std::string_view line) {
    GraphemeInventory inv;
    std::string cur;
    auto flush = [&]() {
      inv.symbols_.push_back(cur);
      cur.clear();
    };
    for (std::size_t i = 0; i < line.size(); ++i) {
      const char c = line[i];
      if (c == '\\' && i + 1 < line.size()) {
        ++i;
        cur += line[i] == 'n' ? '\n' : line[i];
      } else if (c == ',') {
        flush();
      } else {
        cur += c;
      }
    }
    flush();
    inv.space_ = inv.locate(kSpace);
    inv.unk_ = inv.locate(kUnk);
    inv.sos_ = inv.locate(kSos);
    inv.eos_ = inv.locate(kEos);
    inv.index_all();
    return inv;
  }

 private:
  int locate(const std::string& sym) const {
    auto it = std::find(symbols_.begin(), symbols_.end(), sym);
    if (it == symbols_.end()) {
      throw CorpusError("inventory is missing reserved symbol " + sym);
    }
    return static_cast<int>(it - symbols_.begin());
  }

  void index_all() {
    index_.clear();
    for (std::size_t i = 0; i < symbols_.size(); ++i) {
      if (!index_.emplace(symbols_[i], static_cast<int>(i)).second) {
        throw CorpusError("duplicate grapheme in inventory: " + symbols_[i]);
      }
    }
  }

  std::vector<std::string> symbols_;
  std::unordered_map<std::string, int> index_;
  int space_ = -1;
  int unk_ = -1;
  int sos_ = -1;
  int eos_ = -1;
};

}  // namespace easr
