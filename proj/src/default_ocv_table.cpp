// Generated by tools/gen_ocv_table.py; do not edit by hand.
#include "ksve/pack_sim.hpp"

namespace ksve {

const std::vector<double>& default_ocv_table_volts() {
  // 401 points, SOC uniformly spaced on [0, 1]
  static const std::vector<double> table = {
      2.500000000, 2.539701498, 2.576882465, 2.611715677, 2.644362139, 2.674971881,
      2.703684697, 2.730630835, 2.755931641, 2.779700163, 2.802041715, 2.823054396,
      2.842829581, 2.861452380, 2.879002064, 2.895552456, 2.911172310, 2.925925651,
      2.939872098, 2.953067166, 2.965562545, 2.977406364, 2.988643429, 2.999315456,
      3.009461279, 3.019117048, 3.028316414, 3.037090698, 3.045469057, 3.053478622,
      3.061144649, 3.068490638, 3.075538461, 3.082308469, 3.088819602, 3.095089480,
      3.101134499, 3.106969916, 3.112609921, 3.118067721, 3.123355599, 3.128484983,
      3.133466505, 3.138310055, 3.143024833, 3.147619399, 3.152101714, 3.156479186,
      3.160758707, 3.164946688, 3.169049094, 3.173071478, 3.177019005, 3.180896484,
      3.184708392, 3.188458896, 3.192151879, 3.195790956, 3.199379498, 3.202920645,
      3.206417326, 3.209872275, 3.213288043, 3.216667013, 3.220011412, 3.223323325,
      3.226604701, 3.229857367, 3.233083039, 3.236283327, 3.239459743, 3.242613713,
      3.245746581, 3.248859616, 3.251954016, 3.255030921, 3.258091409, 3.261136509,
      3.264167198, 3.267184413, 3.270189051, 3.273181970, 3.276163999, 3.279135936,
      3.282098552, 3.285052596, 3.287998794, 3.290937853, 3.293870466, 3.296797306,
      3.299719039, 3.302636314, 3.305549772, 3.308460046, 3.311367761, 3.314273534,
      3.317177978, 3.320081700, 3.322985309, 3.325889535, 3.328795385, 3.331704137,
      3.334617289, 3.337536504, 3.340463560, 3.343400280, 3.346348476, 3.349309876,
      3.352286074, 3.355278472, 3.358288248, 3.361316323, 3.364363361, 3.367429774,
      3.370515747, 3.373621270, 3.376746172, 3.379890123, 3.383052634, 3.386233065,
      3.389430626, 3.392644393, 3.395873314, 3.399116224, 3.402371864, 3.405638893,
      3.408915907, 3.412201460, 3.415494077, 3.418792277, 3.422094586, 3.425399553,
      3.428705769, 3.432011872, 3.435316551, 3.438618544, 3.441916635, 3.445209658,
      3.448496498, 3.451776091, 3.455047419, 3.458309518, 3.461561469, 3.464802401,
      3.468031491, 3.471247959, 3.474451071, 3.477640136, 3.480814507, 3.483973582,
      3.487116798, 3.490243640, 3.493353634, 3.496446356, 3.499521425, 3.502578513,
      3.505617341, 3.508637689, 3.511639392, 3.514622351, 3.517586533, 3.520531978,
      3.523458799, 3.526367188, 3.529257412, 3.532129816, 3.534984823, 3.537822933,
      3.540644723, 3.543450847, 3.546242029, 3.549019067, 3.551782825, 3.554534234,
      3.557274285, 3.560004024, 3.562724553, 3.565437018, 3.568142607, 3.570842544,
      3.573538082, 3.576230500, 3.578921090, 3.581611157, 3.584302008, 3.586994945,
      3.589691258, 3.592392224, 3.595099095, 3.597813099, 3.600535430, 3.603267247,
      3.606009665, 3.608763751, 3.611530520, 3.614310927, 3.617105863, 3.619916149,
      3.622742532, 3.625585677, 3.628446161, 3.631324472, 3.634220997, 3.637136022,
      3.640069724, 3.643022168, 3.645993300, 3.648982946, 3.651990813, 3.655016485,
      3.658059422, 3.661118963, 3.664194323, 3.667284598, 3.670388763, 3.673505678,
      3.676634088, 3.679772634, 3.682919850, 3.686074180, 3.689233980, 3.692397530,
      3.695563048, 3.698728696, 3.701892548, 3.705052560, 3.708206624, 3.711352633,
      3.714488550, 3.717612471, 3.720722683, 3.723817707, 3.726896328, 3.729957602,
      3.733000854, 3.736025654, 3.739031777, 3.742019159, 3.744987855, 3.747938017,
      3.750869881, 3.753783754, 3.756680009, 3.759559072, 3.762421415, 3.765267550,
      3.768098024, 3.770913415, 3.773714325, 3.776501381, 3.779275231, 3.782036543,
      3.784786005, 3.787524322, 3.790252222, 3.792970448, 3.795679767, 3.798380967,
      3.801074859, 3.803762281, 3.806444096, 3.809121195, 3.811794502, 3.814464969,
      3.817133586, 3.819801373, 3.822469380, 3.825138644, 3.827810162, 3.830484894,
      3.833163767, 3.835847677, 3.838537495, 3.841234066, 3.843938218, 3.846650759,
      3.849372485, 3.852104180, 3.854846617, 3.857600559, 3.860366761, 3.863145968,
      3.865938910, 3.868746305, 3.871568848, 3.874407207, 3.877262016, 3.880133860,
      3.883023267, 3.885930689, 3.888856488, 3.891800908, 3.894764061, 3.897745868,
      3.900745916, 3.903763279, 3.906796399, 3.909843078, 3.912900587, 3.915965869,
      3.919035813, 3.922107521, 3.925178490, 3.928246451, 3.931309266, 3.934364945,
      3.937411653, 3.940447720, 3.943471641, 3.946482078, 3.949477858, 3.952457966,
      3.955421542, 3.958367877, 3.961296402, 3.964206689, 3.967098444, 3.969971501,
      3.972825820, 3.975661489, 3.978478729, 3.981277894, 3.984059477, 3.986824101,
      3.989572515, 3.992305583, 3.995024271, 3.997729629, 4.000422777, 4.003104882,
      4.005777140, 4.008440755, 4.011096922, 4.013746802, 4.016391511, 4.019032098,
      4.021669534, 4.024304694, 4.026938352, 4.029571162, 4.032203657, 4.034836249,
      4.037469302, 4.040103173, 4.042738212, 4.045374763, 4.048013163, 4.050653746,
      4.053296836, 4.055942750, 4.058591802, 4.061244296, 4.063900532, 4.066560800,
      4.069225386, 4.071894568, 4.074568618, 4.077247800, 4.079932372, 4.082622585,
      4.085318684, 4.088020906, 4.090729483, 4.093444637, 4.096166587, 4.098895543,
      4.101631711, 4.104375287, 4.107126462, 4.109885423, 4.112652346, 4.115427404,
      4.118210763, 4.121002582, 4.123803014, 4.126612207, 4.129430302, 4.132257433,
      4.135093730, 4.137939315, 4.140794307, 4.143658817, 4.146532950, 4.149416806,
      4.152310479, 4.155214059, 4.158127628, 4.161051263, 4.163985038, 4.166929018,
      4.169883264, 4.172847833, 4.175822774, 4.178808133, 4.181803949, 4.184810257,
      4.187827085, 4.190854458, 4.193892393, 4.196940905, 4.200000000,
  };
  return table;
}

}  // namespace ksve
