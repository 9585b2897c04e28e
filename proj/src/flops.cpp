#include "picnet/flops.hpp"

namespace picnet::flops {

bool enabled = false;
int64_t count = 0;

}  // namespace picnet::flops
