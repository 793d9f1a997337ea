#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "../core/tensor.hpp"

namespace fraglow::run {

// Frame layout: [len u32 LE][type u8][payload]. len counts payload bytes
// plus the type byte.
enum class MsgType : uint8_t {
    Hello = 0,
    LoadFragment = 1,
    StartEpisode = 2,
    TensorData = 3,
    Barrier = 4,
    Metrics = 5,
    Shutdown = 6,
    Ack = 7,
    GradAsync = 8,
};

struct Frame {
    MsgType type = MsgType::Hello;
    std::vector<uint8_t> payload;
};

void put_u32(std::vector<uint8_t>& buf, uint32_t v);
uint32_t get_u32(const uint8_t* p);

std::vector<uint8_t> encode_frame(const Frame& f);
// Parses one frame from buf; returns bytes consumed, 0 if incomplete.
size_t decode_frame(const uint8_t* buf, size_t len, Frame* out);

// TensorData / GradAsync payload: channel id u32, step tag u32, tensor.
std::vector<uint8_t> encode_tensor_msg(uint32_t channel, uint32_t tag, const Tensor& t);
void decode_tensor_msg(const std::vector<uint8_t>& payload, uint32_t* channel, uint32_t* tag,
                       Tensor* t);

}  // namespace fraglow::run
