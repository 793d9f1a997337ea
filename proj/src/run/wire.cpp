#include "wire.hpp"

namespace fraglow::run {

void put_u32(std::vector<uint8_t>& buf, uint32_t v) {
    for (int b = 0; b < 4; ++b) buf.push_back(static_cast<uint8_t>(v >> (8 * b)));
}

uint32_t get_u32(const uint8_t* p) {
    uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= static_cast<uint32_t>(p[b]) << (8 * b);
    return v;
}

std::vector<uint8_t> encode_frame(const Frame& f) {
    std::vector<uint8_t> out;
    out.reserve(5 + f.payload.size());
    put_u32(out, static_cast<uint32_t>(f.payload.size()) + 1);
    out.push_back(static_cast<uint8_t>(f.type));
    out.insert(out.end(), f.payload.begin(), f.payload.end());
    return out;
}

size_t decode_frame(const uint8_t* buf, size_t len, Frame* out) {
    if (len < 5) return 0;
    uint32_t body = get_u32(buf);
    if (body < 1) fail(Errc::Runtime, "malformed frame: zero body length");
    if (len < 4 + body) return 0;
    if (buf[4] > static_cast<uint8_t>(MsgType::GradAsync))
        fail(Errc::Runtime, "malformed frame: unknown type " + std::to_string(buf[4]));
    out->type = static_cast<MsgType>(buf[4]);
    out->payload.assign(buf + 5, buf + 4 + body);
    return 4 + body;
}

std::vector<uint8_t> encode_tensor_msg(uint32_t channel, uint32_t tag, const Tensor& t) {
    std::vector<uint8_t> out;
    put_u32(out, channel);
    put_u32(out, tag);
    auto enc = t.encode();
    out.insert(out.end(), enc.begin(), enc.end());
    return out;
}

void decode_tensor_msg(const std::vector<uint8_t>& payload, uint32_t* channel, uint32_t* tag,
                       Tensor* t) {
    if (payload.size() < 8) fail(Errc::Runtime, "tensor message truncated");
    *channel = get_u32(payload.data());
    *tag = get_u32(payload.data() + 4);
    *t = Tensor::decode(payload.data() + 8, payload.size() - 8);
}

}  // namespace fraglow::run
