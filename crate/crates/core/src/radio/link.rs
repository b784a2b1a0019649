//! Abstract link budget: log-distance path loss and truncated-Shannon rates.

/// Thermal noise density, dBm/Hz.
const THERMAL_NOISE_DBM_HZ: f64 = -174.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellConfig {
    pub rb_count: u32,
    pub rb_bandwidth_hz: f64,
    pub dl_carrier_hz: f64,
    pub ul_carrier_hz: f64,
    pub enb_tx_power_dbm: f64,
    pub enb_noise_figure_db: f64,
    pub ue_tx_power_dbm: f64,
    pub ue_noise_figure_db: f64,
}

impl Default for CellConfig {
    fn default() -> Self {
        CellConfig {
            rb_count: 25,
            rb_bandwidth_hz: 180_000.0,
            dl_carrier_hz: 945e6,
            ul_carrier_hz: 900e6,
            enb_tx_power_dbm: 43.0,
            enb_noise_figure_db: 3.0,
            ue_tx_power_dbm: 23.0,
            ue_noise_figure_db: 9.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkModel {
    pub pathloss_exponent: f64,
    /// Fraction of Shannon capacity achieved.
    pub shannon_fraction: f64,
    /// Spectral-efficiency ceiling, b/s/Hz.
    pub eta_max: f64,
    /// Below this SINR the link carries nothing.
    pub outage_sinr_db: f64,
    pub tti_s: f64,
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel {
            pathloss_exponent: 3.0,
            shannon_fraction: 0.75,
            eta_max: 5.55,
            outage_sinr_db: -6.0,
            tti_s: 1e-3,
        }
    }
}

/// Free-space loss in dB at `d` metres for `carrier_hz`.
pub fn free_space_loss_db(d: f64, carrier_hz: f64) -> f64 {
    20.0 * d.log10() + 20.0 * carrier_hz.log10() - 147.55
}

impl LinkModel {
    /// Log-distance path loss anchored at the 1 m free-space loss. Distances
    /// under 1 m are clamped to 1 m.
    pub fn pathloss_db(&self, d: f64, carrier_hz: f64) -> f64 {
        let d = d.max(1.0);
        free_space_loss_db(1.0, carrier_hz) + 10.0 * self.pathloss_exponent * d.log10()
    }

    /// Bits one RB carries in one TTI at the given SINR.
    pub fn per_rb_rate(&self, sinr_db: f64, rb_bandwidth_hz: f64) -> u32 {
        // Negated so NaN also counts as outage.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(sinr_db >= self.outage_sinr_db) {
            return 0;
        }
        let linear = 10f64.powf(sinr_db / 10.0);
        let eta = (self.shannon_fraction * (1.0 + linear).log2()).min(self.eta_max);
        // The epsilon keeps the exact ceiling (999 bits) from flooring to 998.
        (eta * rb_bandwidth_hz * self.tti_s + 1e-9).floor() as u32
    }

    fn noise_per_rb_dbm(rb_bandwidth_hz: f64, noise_figure_db: f64) -> f64 {
        THERMAL_NOISE_DBM_HZ + 10.0 * rb_bandwidth_hz.log10() + noise_figure_db
    }

    /// Downlink SINR per RB; the eNB spreads its power evenly over `rb_count` RBs.
    pub fn dl_sinr_db(&self, cell: &CellConfig, d: f64) -> f64 {
        let per_rb = cell.enb_tx_power_dbm - 10.0 * f64::from(cell.rb_count.max(1)).log10();
        per_rb - self.pathloss_db(d, cell.dl_carrier_hz) - Self::noise_per_rb_dbm(cell.rb_bandwidth_hz, cell.ue_noise_figure_db)
    }

    /// Uplink SINR per RB at the UE's configured transmit power.
    pub fn ul_sinr_db(&self, cell: &CellConfig, d: f64) -> f64 {
        cell.ue_tx_power_dbm - self.pathloss_db(d, cell.ul_carrier_hz) - Self::noise_per_rb_dbm(cell.rb_bandwidth_hz, cell.enb_noise_figure_db)
    }

    pub fn link_state(&self, cell: &CellConfig, d: f64) -> LinkState {
        let sinr_dl = self.dl_sinr_db(cell, d);
        let sinr_ul = self.ul_sinr_db(cell, d);
        LinkState {
            distance: d,
            pathloss_dl_db: self.pathloss_db(d, cell.dl_carrier_hz),
            sinr_dl_db: sinr_dl,
            sinr_ul_db: sinr_ul,
            rate_dl: self.per_rb_rate(sinr_dl, cell.rb_bandwidth_hz),
            rate_ul: self.per_rb_rate(sinr_ul, cell.rb_bandwidth_hz),
        }
    }

    /// Full-band rate in bits/s for one direction at a given per-RB rate.
    pub fn cell_capacity_bps(&self, rb_count: u32, per_rb_rate: u32) -> f64 {
        f64::from(rb_count) * f64::from(per_rb_rate) / self.tti_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkState {
    pub distance: f64,
    pub pathloss_dl_db: f64,
    pub sinr_dl_db: f64,
    pub sinr_ul_db: f64,
    /// Bits per RB per TTI.
    pub rate_dl: u32,
    pub rate_ul: u32,
}
