#include "farelab/vocab.hpp"

#include <sstream>

namespace fare {

std::vector<int> Vocab::encode(const std::string& text) const {
    std::vector<int> out;
    std::istringstream in(text);
    std::string word;
    while (in >> word) out.push_back(id(word));
    return out;
}

std::string Vocab::decode(const std::vector<int>& tokens) const {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ' ';
        out += word(tokens[i]);
    }
    return out;
}

}  // namespace fare
