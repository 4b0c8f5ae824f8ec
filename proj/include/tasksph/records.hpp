#pragma once

#include <cstdint>

namespace tasksph {

// Transfer records exchanged with a device backend. Every group is 16 bytes
// except the trailing (cf, cl) index pair.
struct Float4 {
  float x, y, z, w;
};

struct Index2 {
  std::int32_t cf, cl;  // partner range [cf, cl] inside the same record array
};

struct SendDensity {
  Float4 x_h;
  Float4 v_m;
  Index2 range;
};

struct RecvDensity {
  Float4 rho_drho_wcount_dwcount;
  Float4 curl_div;
};

struct SendGradient {
  Float4 x_h;
  Float4 v_rho;
  Float4 P_cs_u_m;
  Index2 range;
};

struct RecvGradient {
  Float4 vsig_lapu;
};

struct SendForce {
  Float4 x_h;
  Float4 v_m;
  Float4 rho_P_cs_u;
  Float4 f_alphav_balsara_alphac;
  Index2 range;
};

struct RecvForce {
  Float4 a_udt;
  Float4 vsig_hdt;
};

static_assert(sizeof(SendDensity) == 40);
static_assert(sizeof(RecvDensity) == 32);
static_assert(sizeof(SendGradient) == 56);
static_assert(sizeof(RecvGradient) == 16);
static_assert(sizeof(SendForce) == 72);
static_assert(sizeof(RecvForce) == 32);

}  // namespace tasksph
