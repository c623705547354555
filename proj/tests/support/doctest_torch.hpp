#pragma once

// c10's logging header defines a CHECK macro of its own; load torch first, drop
// it, then let doctest own the name.
#include <torch/torch.h>

#undef CHECK

#include <doctest.h>
