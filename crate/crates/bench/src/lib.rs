//! Fixtures shared by the solver benchmarks.

use xlayer::backhaul::{desk_graph, table1_graph, BackhaulGraph, DeskGraphConfig};
use xlayer::net_model::{partial_csi_table, HexLayout};
use xlayer::{DistributionTable, NetworkInstance};

/// 7-cell, 3-sector MIMO layout with 2 users per sector.
pub fn hex_ibc(seed: u64) -> NetworkInstance {
    HexLayout {
        cells: 7,
        sectors_per_cell: 3,
        users_per_sector: 2,
        tx_antennas: 4,
        rx_antennas: 2,
        ..Default::default()
    }
    .generate(seed)
    .expect("valid layout")
}

/// 7-BS / 14-user partial-CSI network.
pub fn partial_csi(seed: u64) -> (NetworkInstance, DistributionTable) {
    let inst = HexLayout { cells: 7, users_per_sector: 2, tx_antennas: 4, rx_antennas: 2, ..Default::default() }
        .generate(seed)
        .expect("valid layout");
    let table = partial_csi_table(&inst, 6.0, 1.0, 10f64.powf(1.5), seed).expect("valid table");
    (inst, table)
}

pub fn desk(seed: u64) -> BackhaulGraph {
    desk_graph(&DeskGraphConfig::default(), seed).expect("valid graph")
}

/// Wired multicommodity graph of the given size.
pub fn wired(commodities: usize, nodes: usize, links: usize) -> BackhaulGraph {
    table1_graph(commodities, nodes, links, 0).expect("valid graph")
}
